// storectl: solve, verify and simulate store-control instances.
//
// Exit codes: 0 ok, 2 configuration error, 3 infeasible instance,
// 4 internal-consistency (certificate) failure.

#include "storectl/config.hpp"
#include "storectl/oracle.hpp"
#include "storectl/prices.hpp"
#include "storectl/report.hpp"
#include "storectl/sim.hpp"
#include "storectl/solver.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace storectl;

namespace {

struct Common {
  std::string config;
  std::string preset;
  std::vector<std::string> overrides;
  std::string out = ".";
  bool plot_script = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "JSON config file");
  app->add_option("-p,--preset", c.preset, "start from a named preset");
  app->add_option("-s,--set", c.overrides, "override a config key, e.g. penalty.a=10");
  app->add_option("-o,--out", c.out, "output directory");
  app->add_flag("--plot-script", c.plot_script, "also write plot_trajectory.py");
}

RunConfig load(const Common& c) {
  json doc = json::object();
  std::string base_dir = ".";
  if (!c.config.empty()) {
    doc = load_config_file(c.config);
    base_dir = fs::path(c.config).parent_path().string();
    if (base_dir.empty()) base_dir = ".";
  }
  if (!c.preset.empty()) doc["preset"] = c.preset;
  if (c.config.empty() && c.preset.empty()) throw ConfigError("either --config or --preset is required");
  for (const auto& o : c.overrides) apply_override(doc, o);
  return parse_config(doc, base_dir);
}

fs::path prepare(const std::string& dir) {
  fs::create_directories(dir);
  return fs::path(dir);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::ofstream open(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void maybe_plot(const Common& c, const fs::path& dir) {
  if (c.plot_script) open(dir / "plot_trajectory.py") << plot_script();
}

int run_solve(const Common& c) {
  const RunConfig cfg = load(c);
  const ProblemInstance inst = build_instance(cfg);
  const fs::path dir = prepare(c.out);
  const Solution sol = solve(inst, cfg.solver);
  {
    auto out = open(dir / "trajectory.csv");
    write_trajectory_csv(out, inst, sol);
  }
  write_json(dir / "objective.json", objective_json(inst, sol));
  write_json(dir / "kkt_report.json", kkt_json(verify_kkt(inst, sol, cfg.solver.verify_tol), cfg.solver.verify_tol));
  maybe_plot(c, dir);
  std::cout << "objective " << sol.objective << " over " << inst.horizon() << " periods, " << sol.segments
            << " segments\n";
  return 0;
}

int run_oracle(const Common& c, int grid) {
  const RunConfig cfg = load(c);
  const ProblemInstance inst = build_instance(cfg);
  const fs::path dir = prepare(c.out);
  const Solution sol = solve(inst, cfg.solver);
  const int n = grid > 0 ? grid : (cfg.grid_points > 0 ? cfg.grid_points : default_grid_points(inst));
  const OracleComparison cmp = compare_with_oracle(inst, sol, n);
  write_json(dir / "oracle_report.json", oracle_json(cmp));
  std::cout << "solver " << cmp.objective_solver << "  dp " << cmp.objective_dp << "  gap " << cmp.gap << " (bound "
            << cmp.bound << ")  " << (cmp.passed ? "ok" : "FAILED") << '\n';
  return cmp.passed ? 0 : 4;
}

int run_simulate(const Common& c, int n_seeds) {
  RunConfig cfg = load(c);
  if (n_seeds > 0) {
    const std::uint64_t root = cfg.simulation.seeds.empty() ? 1 : cfg.simulation.seeds.front();
    cfg.simulation.seeds.clear();
    for (int k = 0; k < n_seeds; ++k) cfg.simulation.seeds.push_back(root + std::uint64_t(k));
  }
  const ProblemInstance inst = build_instance(cfg);
  const fs::path dir = prepare(c.out);
  const Solution plan = solve(inst, cfg.solver);
  const auto runs = simulate_many(inst, cfg.simulation.shocks, cfg.simulation.rule, cfg.simulation.seeds,
                                  cfg.simulation.options, cfg.simulation.threads);
  {
    auto out = open(dir / "runs.csv");
    write_runs_csv(out, runs);
  }
  const json summary = summary_json(runs, plan, inst);
  write_json(dir / "summary.json", summary);
  std::cout << "mean realized cost " << summary["mean_realized_cost"].get<double>() << " over " << runs.size()
            << " runs\n";
  return 0;
}

int run_sensitivity(const Common& c, bool audit, double h) {
  const RunConfig cfg = load(c);
  const ProblemInstance inst = build_instance(cfg);
  const fs::path dir = prepare(c.out);
  const Solution sol = solve(inst, cfg.solver);
  std::vector<SensitivityAudit> fd;
  if (audit) fd = audit_sensitivity(inst, sol, h, cfg.solver);
  auto out = open(dir / "sensitivity.csv");
  write_sensitivity_csv(out, inst, sol, audit ? &fd : nullptr);
  return 0;
}

std::vector<double> parse_levels(const std::string& spec) {
  // lo:hi:step or a comma list
  std::vector<double> out;
  if (spec.find(':') != std::string::npos) {
    double lo = 0, hi = 0, step = 0;
    char c1 = 0, c2 = 0;
    std::istringstream in(spec);
    if (!(in >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' || step <= 0 || hi < lo)
      throw ConfigError("levels must look like lo:hi:step");
    const int n = int(std::floor((hi - lo) / step + 1e-9));
    for (int k = 0; k <= n; ++k) out.push_back(lo + k * step);
    return out;
  }
  std::istringstream in(spec);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ConfigError("bad level '" + tok + "'");
    }
  }
  if (out.empty()) throw ConfigError("no levels given");
  return out;
}

void report_error(const std::string& kind, const std::string& message, int code, const std::string& out_dir,
                  const json& extra = json::object()) {
  json err = {{"schema_version", kSchemaVersion}, {"error", kind}, {"message", message}, {"exit_code", code}};
  err.update(extra);
  std::cerr << err.dump() << '\n';
  std::error_code ec;
  if (out_dir.empty()) return;
  fs::create_directories(out_dir, ec);
  std::ofstream f(fs::path(out_dir) / "error.json");
  if (f) f << err.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optimal control of an energy store for arbitrage and buffering"};
  app.require_subcommand(1);

  Common c;
  auto* solve_cmd = app.add_subcommand("solve", "solve the deterministic program");
  add_common(solve_cmd, c);

  int grid = 0;
  auto* oracle_cmd = app.add_subcommand("oracle", "compare the solver with the dynamic-programming oracle");
  add_common(oracle_cmd, c);
  oracle_cmd->add_option("--grid", grid, "lattice points (default from config)");

  int n_seeds = 0;
  auto* sim_cmd = app.add_subcommand("simulate", "rolling-horizon simulation with random shocks");
  add_common(sim_cmd, c);
  sim_cmd->add_option("--seeds", n_seeds, "number of consecutive seeds (overrides config)");

  bool audit = false;
  double h = 1e-3;
  auto* sens_cmd = app.add_subcommand("sensitivity", "capacity sensitivities alpha and beta");
  add_common(sens_cmd, c);
  sens_cmd->add_flag("--audit", audit, "add finite-difference columns");
  sens_cmd->add_option("--step", h, "finite-difference step");

  auto* prices_cmd = app.add_subcommand("prices", "price series utilities");
  prices_cmd->require_subcommand(1);
  int days = 30;
  double base = 50, amplitude = 20, noise = 5;
  std::uint64_t seed = 2011;
  std::string in_path, out_path;
  auto* synth_cmd = prices_cmd->add_subcommand("synth", "write a synthetic half-hourly series");
  synth_cmd->add_option("--days", days);
  synth_cmd->add_option("--base", base);
  synth_cmd->add_option("--amplitude", amplitude);
  synth_cmd->add_option("--noise", noise);
  synth_cmd->add_option("--seed", seed);
  synth_cmd->add_option("--out", out_path, "output file (stdout when omitted)");
  auto* echo_cmd = prices_cmd->add_subcommand("echo", "read a price file and write it back");
  echo_cmd->add_option("--in", in_path)->required();
  echo_cmd->add_option("--out", out_path, "output file (stdout when omitted)");

  double prob = 0.1, mag_mean = 1.0, rule_a = 10.0, p_out = 1e9;
  std::string rule = "loss_of_load", levels = "0:10:0.25";
  long samples = 100000;
  auto* est_cmd = app.add_subcommand("estimate-penalty", "Monte-Carlo buffering penalty table");
  est_cmd->add_option("--prob", prob, "shock probability per period");
  est_cmd->add_option("--mean", mag_mean, "mean of exponential shock magnitudes");
  est_cmd->add_option("--rule", rule, "loss_of_load or energy_unserved");
  est_cmd->add_option("--a", rule_a, "loss-of-load charge or unit price");
  est_cmd->add_option("--p-out", p_out, "output rate limit");
  est_cmd->add_option("--levels", levels, "lo:hi:step or comma list");
  est_cmd->add_option("--samples", samples);
  est_cmd->add_option("--seed", seed);
  est_cmd->add_option("--out", out_path, "output CSV (stdout when omitted)");

  app.add_subcommand("presets", "list preset names");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    report_error("usage", e.what(), 2, "");
    return 2;
  }

  try {
    if (solve_cmd->parsed()) return run_solve(c);
    if (oracle_cmd->parsed()) return run_oracle(c, grid);
    if (sim_cmd->parsed()) return run_simulate(c, n_seeds);
    if (sens_cmd->parsed()) return run_sensitivity(c, audit, h);
    if (synth_cmd->parsed() || echo_cmd->parsed()) {
      const PriceSeries s = synth_cmd->parsed() ? synth_prices(days, base, amplitude, noise, seed) : read_prices_file(in_path);
      if (out_path.empty()) write_prices(std::cout, s);
      else write_prices_file(out_path, s);
      return 0;
    }
    if (est_cmd->parsed()) {
      ShockProcess shocks;
      shocks.occurrence_prob = Eigen::VectorXd::Constant(1, prob);
      shocks.magnitude = ExponentialMagnitude{mag_mean};
      BufferingCostRule r;
      if (rule == "loss_of_load") r = LossOfLoad{rule_a};
      else if (rule == "energy_unserved") r = EnergyUnserved{rule_a};
      else throw ConfigError("unknown rule '" + rule + "'");
      RateWindow rates{1.0, p_out};
      const PenaltyEstimate est = estimate_penalty(shocks, r, rates, parse_levels(levels), samples, seed);
      std::ofstream file;
      if (!out_path.empty()) {
        file.open(out_path);
        if (!file) throw std::runtime_error("cannot write " + out_path);
      }
      std::ostream& out = out_path.empty() ? std::cout : file;
      out << "# schema_version=" << kSchemaVersion << " projection_residual=" << est.residual << '\n';
      out << "level,value,raw,std_error\n";
      for (Eigen::Index k = 0; k < est.raw.size(); ++k)
        out << est.model.levels(k) << ',' << est.model.values(k) << ',' << est.raw(k) << ',' << est.std_error(k) << '\n';
      return 0;
    }
    for (const auto& name : preset_names()) std::cout << name << '\n';
    return 0;
  } catch (const ConfigError& e) {
    report_error("config", e.what(), 2, c.out);
    return 2;
  } catch (const PriceParseError& e) {
    report_error("config", e.what(), 2, c.out, {{"line", e.line()}});
    return 2;
  } catch (const InfeasibleInstance& e) {
    report_error("infeasible", e.what(), 3, c.out, {{"period", e.report().period}});
    return 3;
  } catch (const DomainError& e) {
    report_error("config", e.what(), 2, c.out);
    return 2;
  } catch (const SolverError& e) {
    report_error("internal", e.what(), 4, c.out);
    return 4;
  } catch (const std::exception& e) {
    report_error("internal", e.what(), 4, c.out);
    return 4;
  }
}
