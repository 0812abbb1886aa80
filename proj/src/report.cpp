#include "storectl/report.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

namespace storectl {

using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

double std_error(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / double(v.size() - 1) / double(v.size()));
}

}  // namespace

void write_trajectory_csv(std::ostream& out, const ProblemInstance& inst, const Solution& sol) {
  const int T = inst.horizon();
  const double tol = 1e-9 * energy_scale(inst);
  const auto& s = sol.trajectory.levels;
  const auto& c = sol.certificate;
  out << "# schema_version=" << kSchemaVersion << '\n';
  out << "t,level,increment,lambda,nu,horizon,at_lower,at_upper\n";
  out << "0," << num(s(0)) << ",,,,,,\n";
  for (int t = 1; t <= T; ++t) {
    const PeriodSpec& p = inst.period(t);
    const bool lo = std::abs(s(t) - p.lower) <= tol;
    const bool hi = std::abs(s(t) - p.upper) <= tol;
    const double lambda = c.lambda(t - 1);
    if ((!lo && !hi && lambda != 0.0) || (lo && !hi && lambda < 0.0) || (hi && !lo && lambda > 0.0)) {
      std::ostringstream msg;
      msg << "multiplier at period " << t << " has the wrong sign for its bound contact";
      throw SolverError(msg.str(), sol);
    }
    out << t << ',' << num(s(t)) << ',' << num(s(t) - s(t - 1)) << ',' << num(lambda) << ',' << num(c.nu(t - 1))
        << ',' << c.horizons[std::size_t(t - 1)] << ',' << int(lo) << ',' << int(hi) << '\n';
  }
}

json objective_json(const ProblemInstance& inst, const Solution& sol) {
  const auto& s = sol.trajectory.levels;
  const double trading = trading_cost(inst, s);
  return {{"schema_version", kSchemaVersion},
          {"horizon", inst.horizon()},
          {"objective", sol.objective},
          {"trading_cost", trading},
          {"penalty_cost", sol.objective - trading},
          {"initial_level", s(0)},
          {"final_level", s(s.size() - 1)},
          {"min_level", s.minCoeff()},
          {"max_level", s.maxCoeff()},
          {"segments", sol.segments},
          {"sweeps", sol.sweeps},
          {"regularization_eps", inst.regularization_eps},
          {"boundary_times", sol.certificate.boundary_times}};
}

json kkt_json(const KktReport& report, double tol) {
  json conds = json::array();
  for (const KktCondition* k : {&report.primal, &report.slackness, &report.tilt, &report.stationarity,
                                &report.sensitivity}) {
    conds.push_back({{"name", k->name}, {"passed", k->passed}, {"worst", k->worst}, {"failed_periods", k->failures}});
  }
  return {{"schema_version", kSchemaVersion}, {"tolerance", tol}, {"passed", report.passed()}, {"conditions", conds}};
}

std::vector<SensitivityAudit> audit_sensitivity(const ProblemInstance& inst, const Solution& sol, double h,
                                                const SolverOptions& opts) {
  const double tol = 1e-9 * energy_scale(inst);
  std::vector<SensitivityAudit> out;
  auto resolve = [&](int t, bool upper, double delta) {
    ProblemInstance moved = inst;
    PeriodSpec& p = moved.periods[std::size_t(t - 1)];
    (upper ? p.upper : p.lower) += delta;
    return solve(moved, opts).objective;
  };
  auto derivative = [&](int t, bool upper) {
    const PeriodSpec& p = inst.period(t);
    const double room_down = upper ? p.upper - p.lower : p.lower;
    const double room_up = upper ? h : p.upper - p.lower;
    const bool down = room_down >= h;
    const bool up = room_up >= h;
    if (up && down) return (resolve(t, upper, h) - resolve(t, upper, -h)) / (2.0 * h);
    if (up) return (resolve(t, upper, h) - sol.objective) / h;
    if (down) return (sol.objective - resolve(t, upper, -h)) / h;
    return std::nan("");
  };
  for (int t = 1; t <= inst.horizon(); ++t) {
    const PeriodSpec& p = inst.period(t);
    const double s = sol.trajectory.levels(t);
    const bool lo = std::abs(s - p.lower) <= tol;
    const bool hi = std::abs(s - p.upper) <= tol;
    if (!lo && !hi) continue;
    SensitivityAudit a{t, 0.0, 0.0};
    if (lo) a.d_lower = derivative(t, false);
    if (hi) a.d_upper = derivative(t, true);
    out.push_back(a);
  }
  return out;
}

void write_sensitivity_csv(std::ostream& out, const ProblemInstance& inst, const Solution& sol,
                           const std::vector<SensitivityAudit>* audit) {
  const auto& c = sol.certificate;
  out << "# schema_version=" << kSchemaVersion << '\n';
  out << "t,alpha,beta" << (audit ? ",fd_lower,fd_upper" : "") << '\n';
  std::size_t k = 0;
  for (int t = 1; t <= inst.horizon(); ++t) {
    out << t << ',' << num(c.alpha(t - 1)) << ',' << num(c.beta(t - 1));
    if (audit) {
      if (k < audit->size() && (*audit)[k].period == t) {
        out << ',' << num((*audit)[k].d_lower) << ',' << num((*audit)[k].d_upper);
        ++k;
      } else {
        out << ",0,0";
      }
    }
    out << '\n';
  }
}

OracleComparison compare_with_oracle(const ProblemInstance& inst, const Solution& sol, int grid_points) {
  OracleComparison cmp;
  const ValueTable tab = dp_solve(inst, grid_points);
  cmp.grid_points = tab.points();
  cmp.spacing = tab.spacing;
  cmp.objective_solver = sol.objective;
  cmp.objective_dp = dp_objective(inst, tab);
  cmp.lipschitz = lipschitz_bound(inst);
  cmp.gap = std::abs(cmp.objective_solver - cmp.objective_dp);
  cmp.bound = cmp.lipschitz * cmp.spacing;
  cmp.relative_gap = cmp.gap / std::max(std::abs(cmp.objective_dp), 1.0);
  const Trajectory roll = dp_policy_rollout(inst, tab, inst.initial_level);
  cmp.max_level_diff = (roll.levels - sol.trajectory.levels).cwiseAbs().maxCoeff();
  cmp.passed = std::isfinite(cmp.objective_dp) && cmp.gap <= cmp.bound && cmp.relative_gap <= 1e-2;
  return cmp;
}

json oracle_json(const OracleComparison& cmp) {
  return {{"schema_version", kSchemaVersion},
          {"grid_points", cmp.grid_points},
          {"grid_spacing", cmp.spacing},
          {"objective_solver", cmp.objective_solver},
          {"objective_dp", cmp.objective_dp},
          {"lipschitz_bound", cmp.lipschitz},
          {"gap", cmp.gap},
          {"gap_bound", cmp.bound},
          {"relative_gap", cmp.relative_gap},
          {"max_level_difference", cmp.max_level_diff},
          {"passed", cmp.passed}};
}

void write_runs_csv(std::ostream& out, const std::vector<SimulationRun>& runs) {
  out << "# schema_version=" << kSchemaVersion << '\n';
  out << "seed,realized_cost,trading_cost,buffering_cost,violation_cost,shocks,resolves,first_shock_period,"
         "min_level,final_level\n";
  for (const auto& r : runs) {
    out << r.seed << ',' << num(r.realized_cost) << ',' << num(r.trading_cost) << ',' << num(r.buffering_cost) << ','
        << num(r.violation_cost) << ',' << r.shock_log.size() << ',' << r.resolve_count << ','
        << r.first_shock_period << ',' << num(r.realized_levels.minCoeff()) << ','
        << num(r.realized_levels(r.realized_levels.size() - 1)) << '\n';
  }
}

json summary_json(const std::vector<SimulationRun>& runs, const Solution& plan, const ProblemInstance& inst) {
  std::vector<double> cost, trading, buffering, shocks;
  for (const auto& r : runs) {
    cost.push_back(r.realized_cost);
    trading.push_back(r.trading_cost);
    buffering.push_back(r.buffering_cost);
    shocks.push_back(double(r.shock_log.size()));
  }
  return {{"schema_version", kSchemaVersion},
          {"runs", runs.size()},
          {"planned_objective", plan.objective},
          {"planned_trading_cost", trading_cost(inst, plan.trajectory.levels)},
          {"mean_realized_cost", mean(cost)},
          {"stderr_realized_cost", std_error(cost)},
          {"mean_trading_cost", mean(trading)},
          {"mean_buffering_cost", mean(buffering)},
          {"mean_shocks", mean(shocks)}};
}

std::string plot_script() {
  return R"py(#!/usr/bin/env python3
# Plots trajectory.csv (level and look-ahead) from the current directory.
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "trajectory.csv"
rows = [r for r in csv.DictReader(l for l in open(path) if not l.startswith("#"))]
t = [int(r["t"]) for r in rows]
level = [float(r["level"]) for r in rows]
look = [int(r["horizon"]) - int(r["t"]) for r in rows[1:]]

fig, (a, b) = plt.subplots(2, 1, sharex=True, figsize=(10, 6))
a.plot(t, level, lw=0.8)
a.set_ylabel("level")
b.step(t[1:], look, where="post", lw=0.8)
b.set_ylabel("look-ahead (periods)")
b.set_xlabel("period")
fig.tight_layout()
fig.savefig("trajectory.png", dpi=150)
)py";
}

}  // namespace storectl
