#include "storectl/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace storectl {

using nlohmann::json;

namespace {

json month(double a, const std::string& family) {
  json doc = {
      {"schema_version", 1},
      {"initial_level", 0.0},
      {"capacity", 10.0},
      {"lower", 0.0},
      {"rates", {{"p_in", 1.0}, {"p_out", 1.0}}},
      {"unit_scale", 1.0},
      {"cost", {{"model", "market_impact"}, {"eta", 0.85}, {"delta", 0.05}}},
      {"prices",
       {{"source", "synthetic"}, {"days", 30}, {"base", 50.0}, {"amplitude", 20.0}, {"noise_sd", 5.0}, {"seed", 2011}}},
      {"penalty", {{"family", "zero"}}},
  };
  if (family == "exponential") doc["penalty"] = {{"family", "exponential"}, {"a", a}, {"kappa", 1.0}};
  if (family == "inverse") doc["penalty"] = {{"family", "inverse"}, {"b", a}, {"floor", 1e-3}};
  return doc;
}

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <class T>
T get(const json& obj, const std::string& key, T fallback, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

std::vector<double> scalar_or_list(const json& obj, const std::string& key, std::vector<double> fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (v.is_number()) return {v.get<double>()};
  if (v.is_array()) {
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError(key + " must contain numbers");
      out.push_back(e.get<double>());
    }
    if (out.empty()) throw ConfigError(key + " must not be empty");
    return out;
  }
  throw ConfigError(key + " must be a number or a list of numbers");
}

std::string resolve(const std::string& base_dir, const std::string& path) {
  const std::filesystem::path p(path);
  return p.is_absolute() ? path : (std::filesystem::path(base_dir) / p).string();
}

TabulatedPenalty read_penalty_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open penalty table " + path);
  std::vector<double> lv, vv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#' || line.rfind("level", 0) == 0) continue;
    std::istringstream row(line);
    double l = 0.0, v = 0.0;
    char comma = 0;
    if (!(row >> l >> comma >> v) || comma != ',')
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'level,value'");
    lv.push_back(l);
    vv.push_back(v);
  }
  TabulatedPenalty tab;
  tab.levels = Eigen::Map<const Eigen::VectorXd>(lv.data(), Eigen::Index(lv.size()));
  tab.values = Eigen::Map<const Eigen::VectorXd>(vv.data(), Eigen::Index(vv.size()));
  return tab;
}

PenaltyModel parse_penalty(const json& p, const std::string& base_dir) {
  check_keys(p, "penalty", {"family", "a", "kappa", "b", "floor", "levels", "values", "file"});
  const std::string family = get<std::string>(p, "family", "zero", "penalty");
  if (family == "zero") return ZeroPenalty{};
  if (family == "exponential")
    return ExponentialPenalty{get(p, "a", 0.0, "penalty"), get(p, "kappa", 1.0, "penalty")};
  if (family == "inverse") return InversePenalty{get(p, "b", 0.0, "penalty"), get(p, "floor", 1e-3, "penalty")};
  if (family == "tabulated") {
    if (p.contains("file")) return read_penalty_table(resolve(base_dir, p.at("file").get<std::string>()));
    const auto lv = get<std::vector<double>>(p, "levels", {}, "penalty");
    const auto vv = get<std::vector<double>>(p, "values", {}, "penalty");
    if (lv.size() != vv.size() || lv.size() < 2) throw ConfigError("penalty levels and values must match (>= 2 points)");
    TabulatedPenalty tab;
    tab.levels = Eigen::Map<const Eigen::VectorXd>(lv.data(), Eigen::Index(lv.size()));
    tab.values = Eigen::Map<const Eigen::VectorXd>(vv.data(), Eigen::Index(vv.size()));
    return tab;
  }
  throw ConfigError("unknown penalty family '" + family + "'");
}

PriceSeries parse_prices(const json& p, const std::string& base_dir) {
  check_keys(p, "prices", {"source", "path", "days", "base", "amplitude", "noise_sd", "seed", "start"});
  const std::string src = get<std::string>(p, "source", "synthetic", "prices");
  if (src == "file") {
    if (!p.contains("path")) throw ConfigError("prices.path is required for source 'file'");
    return read_prices_file(resolve(base_dir, p.at("path").get<std::string>()));
  }
  if (src != "synthetic") throw ConfigError("unknown price source '" + src + "'");
  const int days = get(p, "days", 30, "prices");
  if (days < 1) throw ConfigError("prices.days must be positive");
  return synth_prices(days, get(p, "base", 50.0, "prices"), get(p, "amplitude", 20.0, "prices"),
                      get(p, "noise_sd", 5.0, "prices"), get<std::uint64_t>(p, "seed", 2011, "prices"),
                      get<std::string>(p, "start", "2011-01-01T00:00", "prices"));
}

SimulationConfig parse_simulation(const json& s) {
  check_keys(s, "simulation",
             {"seeds", "n_seeds", "seed", "occurrence_prob", "magnitude", "signed", "rule", "persistence",
              "credit_shock_outflows", "forced_violation_penalty", "threads", "scheduled"});
  SimulationConfig out;
  const auto prob = scalar_or_list(s, "occurrence_prob", {0.0});
  for (double v : prob)
    if (v < 0.0 || v > 1.0) throw ConfigError("simulation.occurrence_prob must lie in [0, 1]");
  out.shocks.occurrence_prob = Eigen::Map<const Eigen::VectorXd>(prob.data(), Eigen::Index(prob.size()));
  out.shocks.signed_shocks = get(s, "signed", false, "simulation");

  if (s.contains("magnitude")) {
    const json& m = s.at("magnitude");
    check_keys(m, "simulation.magnitude", {"law", "d", "mean", "samples"});
    const std::string law = get<std::string>(m, "law", "exponential", "simulation.magnitude");
    if (law == "constant") out.shocks.magnitude = ConstantMagnitude{get(m, "d", 0.0, "simulation.magnitude")};
    else if (law == "exponential") out.shocks.magnitude = ExponentialMagnitude{get(m, "mean", 1.0, "simulation.magnitude")};
    else if (law == "empirical")
      out.shocks.magnitude = EmpiricalMagnitude{get<std::vector<double>>(m, "samples", {}, "simulation.magnitude")};
    else throw ConfigError("unknown magnitude law '" + law + "'");
  }
  if (s.contains("rule")) {
    const json& r = s.at("rule");
    check_keys(r, "simulation.rule", {"type", "a", "unit_price"});
    const std::string type = get<std::string>(r, "type", "loss_of_load", "simulation.rule");
    if (type == "loss_of_load") out.rule = LossOfLoad{get(r, "a", 10.0, "simulation.rule")};
    else if (type == "energy_unserved") out.rule = EnergyUnserved{get(r, "unit_price", 0.0, "simulation.rule")};
    else throw ConfigError("unknown buffering rule '" + type + "'");
  }
  if (s.contains("seeds")) {
    out.seeds = get<std::vector<std::uint64_t>>(s, "seeds", {}, "simulation");
  } else {
    const int n = get(s, "n_seeds", 1, "simulation");
    const auto root = get<std::uint64_t>(s, "seed", 1, "simulation");
    if (n < 1) throw ConfigError("simulation.n_seeds must be positive");
    out.seeds.clear();
    for (int k = 0; k < n; ++k) out.seeds.push_back(root + std::uint64_t(k));
  }
  if (s.contains("persistence")) {
    const json& p = s.at("persistence");
    check_keys(p, "simulation.persistence", {"window", "reduction"});
    out.options.persistence_window = get(p, "window", 0, "simulation.persistence");
    out.options.persistence_reduction = get(p, "reduction", 0.0, "simulation.persistence");
  }
  out.options.credit_shock_outflows = get(s, "credit_shock_outflows", false, "simulation");
  out.options.forced_violation_penalty = get(s, "forced_violation_penalty", 1e4, "simulation");
  out.threads = get(s, "threads", 0, "simulation");
  if (s.contains("scheduled")) {
    for (const auto& e : s.at("scheduled")) {
      check_keys(e, "simulation.scheduled[]", {"period", "magnitude"});
      out.options.scheduled.push_back({get(e, "period", 0, "scheduled"), get(e, "magnitude", 0.0, "scheduled")});
    }
  }
  return out;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"month-zero", "month-exp1", "month-exp10", "month-inv1", "two-day", "year-terminal"};
}

json preset(const std::string& name) {
  if (name == "month-zero") return month(0.0, "zero");
  if (name == "month-exp1") return month(1.0, "exponential");
  if (name == "month-exp10") return month(10.0, "exponential");
  if (name == "month-inv1") return month(1.0, "inverse");
  if (name == "two-day") {
    json doc = month(0.0, "zero");
    doc["prices"]["days"] = 2;
    doc["prices"]["noise_sd"] = 0.0;
    return doc;
  }
  if (name == "year-terminal") {
    json doc = month(1.0, "exponential");
    doc["prices"]["days"] = 365;
    doc["terminal_target"] = 0.0;
    return doc;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("empty key in override " + assignment);
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

RunConfig parse_config(const json& input, const std::string& base_dir) {
  json doc = input;
  if (doc.contains("preset")) {
    json base = preset(doc.at("preset").get<std::string>());
    doc.erase("preset");
    base.merge_patch(doc);
    doc = std::move(base);
  }
  check_keys(doc, "config",
             {"schema_version", "horizon", "initial_level", "capacity", "lower", "rates", "unit_scale", "cost", "prices",
              "penalty", "terminal_target", "solver", "oracle", "simulation"});
  if (get(doc, "schema_version", 1, "config") != 1) throw ConfigError("unsupported schema_version");

  RunConfig cfg;
  cfg.source = doc;
  if (doc.contains("horizon") && !doc.at("horizon").is_null()) cfg.horizon = get(doc, "horizon", 0, "config");
  cfg.initial_level = get(doc, "initial_level", 0.0, "config");
  cfg.capacity = scalar_or_list(doc, "capacity", {10.0});
  cfg.lower = scalar_or_list(doc, "lower", {0.0});
  cfg.unit_scale = get(doc, "unit_scale", 1.0, "config");
  if (!(cfg.unit_scale > 0.0)) throw ConfigError("unit_scale must be positive");

  if (doc.contains("rates")) {
    const json& r = doc.at("rates");
    check_keys(r, "rates", {"p_in", "p_out"});
    cfg.rates.p_in = get(r, "p_in", 1.0, "rates");
    cfg.rates.p_out = get(r, "p_out", 1.0, "rates");
  }
  if (doc.contains("cost")) {
    const json& c = doc.at("cost");
    check_keys(c, "cost", {"model", "eta", "delta", "breakpoints"});
    cfg.cost_model = get<std::string>(c, "model", "market_impact", "cost");
    cfg.eta = get(c, "eta", 0.85, "cost");
    cfg.delta = get(c, "delta", 0.05, "cost");
    cfg.breakpoints = get<std::vector<std::pair<double, double>>>(c, "breakpoints", {}, "cost");
    if (cfg.cost_model != "market_impact" && cfg.cost_model != "price_taker" && cfg.cost_model != "piecewise_linear")
      throw ConfigError("unknown cost model '" + cfg.cost_model + "'");
    if (cfg.cost_model == "piecewise_linear" && cfg.breakpoints.empty())
      throw ConfigError("cost.breakpoints is required for piecewise_linear");
  }
  try {
    cfg.prices = parse_prices(doc.value("prices", json::object()), base_dir);
    cfg.penalty = parse_penalty(doc.value("penalty", json::object()), base_dir);
  } catch (const json::exception& e) {
    throw ConfigError(e.what());
  }
  if (doc.contains("terminal_target") && !doc.at("terminal_target").is_null())
    cfg.terminal_target = get(doc, "terminal_target", 0.0, "config");

  if (doc.contains("solver")) {
    const json& s = doc.at("solver");
    check_keys(s, "solver", {"snap_tol", "clamp_tol", "fallback_tol", "verify_tol", "regularization_eps", "verify"});
    cfg.solver.snap_tol = get(s, "snap_tol", cfg.solver.snap_tol, "solver");
    cfg.solver.clamp_tol = get(s, "clamp_tol", cfg.solver.clamp_tol, "solver");
    cfg.solver.fallback_tol = get(s, "fallback_tol", cfg.solver.fallback_tol, "solver");
    cfg.solver.verify_tol = get(s, "verify_tol", cfg.solver.verify_tol, "solver");
    cfg.solver.verify = get(s, "verify", true, "solver");
    if (s.contains("regularization_eps") && !s.at("regularization_eps").is_null())
      cfg.regularization_eps = get(s, "regularization_eps", 0.0, "solver");
  }
  if (doc.contains("oracle")) {
    check_keys(doc.at("oracle"), "oracle", {"grid_points"});
    cfg.grid_points = get(doc.at("oracle"), "grid_points", 0, "oracle");
  }
  if (doc.contains("simulation")) {
    try {
      cfg.simulation = parse_simulation(doc.at("simulation"));
    } catch (const json::exception& e) {
      throw ConfigError(e.what());
    }
  }
  cfg.simulation.options.solver = cfg.solver;

  const int T = cfg.horizon.value_or(cfg.prices.size());
  if (T < 1 || T > cfg.prices.size())
    throw ConfigError("horizon must lie in [1, " + std::to_string(cfg.prices.size()) + "]");
  for (const auto* v : {&cfg.capacity, &cfg.lower})
    if (v->size() != 1 && int(v->size()) != T) throw ConfigError("capacity and lower need 1 or T entries");
  return cfg;
}

ProblemInstance build_instance(const RunConfig& cfg) {
  const int T = cfg.horizon.value_or(cfg.prices.size());
  ProblemInstance inst;
  inst.initial_level = cfg.initial_level;
  inst.periods.resize(std::size_t(T));
  for (int t = 1; t <= T; ++t) {
    PeriodSpec& p = inst.periods[std::size_t(t - 1)];
    p.upper = cfg.capacity.size() == 1 ? cfg.capacity[0] : cfg.capacity[std::size_t(t - 1)];
    p.lower = cfg.lower.size() == 1 ? cfg.lower[0] : cfg.lower[std::size_t(t - 1)];
    p.rates = cfg.rates;
    const double c = cfg.prices.prices(t - 1) * cfg.unit_scale;
    if (cfg.cost_model == "market_impact") {
      p.cost = market_impact(c, cfg.delta, cfg.eta);
    } else if (cfg.cost_model == "price_taker") {
      p.cost = price_taker(c, cfg.eta * c);
    } else {
      PiecewiseLinear pl;
      for (const auto& [x, m] : cfg.breakpoints) pl.breakpoints.emplace_back(x, m * c);
      p.cost = pl;
    }
    p.penalty = cfg.penalty;
  }
  if (cfg.terminal_target) {
    PeriodSpec& last = inst.periods.back();
    last.lower = last.upper = *cfg.terminal_target;
  }
  inst.regularization_eps = cfg.regularization_eps.value_or(default_regularization(inst.periods));
  return inst;
}

}  // namespace storectl
