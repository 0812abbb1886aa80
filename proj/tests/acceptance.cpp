// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include "random_instances.hpp"
#include "storectl/config.hpp"
#include "storectl/oracle.hpp"
#include "storectl/report.hpp"
#include "storectl/sim.hpp"
#include "storectl/solver.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>

using namespace storectl;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::printf("%s C%d %s: %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

// Runs a check and turns an escaped exception into a failure.
void run(int id, const std::string& name, const std::function<bool(std::ostringstream&)>& check) {
  std::ostringstream detail;
  bool ok = false;
  try {
    ok = check(detail);
  } catch (const std::exception& e) {
    detail << "exception: " << e.what();
  }
  report(id, name, ok, detail.str());
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

ProblemInstance preset_instance(const std::string& name, int days = 0) {
  nlohmann::json doc = preset(name);
  if (days > 0) doc["prices"]["days"] = days;
  return build_instance(parse_config(doc));
}

SolverOptions unverified() {
  SolverOptions o;
  o.verify = false;
  return o;
}

// Instances shared by the oracle and monotonicity checks.
std::vector<ProblemInstance> lattice_instances() {
  std::mt19937_64 rng(20110);
  std::vector<ProblemInstance> out;
  for (int k = 0; k < 50; ++k) {
    testing::InstanceShape shape;
    shape.horizon = 2 + testing::pick(rng, 95);
    shape.lattice_step = 0.005;
    shape.lattice_cells = 2000;
    out.push_back(testing::random_instance(rng, shape));
  }
  return out;
}

bool kkt_random(std::ostringstream& d) {
  std::mt19937_64 rng(424242);
  const auto t0 = Clock::now();
  int passed = 0;
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    testing::InstanceShape shape;
    shape.horizon = 10 + testing::pick(rng, 1991);
    const ProblemInstance inst = testing::random_instance(rng, shape);
    try {
      const Solution sol = solve(inst, unverified());
      const KktReport r = verify_kkt(inst, sol, 1e-6);
      if (r.passed()) ++passed;
      for (const KktCondition* c : {&r.primal, &r.slackness, &r.tilt, &r.stationarity, &r.sensitivity})
        worst = std::max(worst, c->worst);
    } catch (const std::exception&) {
    }
  }
  const double secs = seconds_since(t0);
  d << passed << "/200 certified, worst residual/tol " << worst << ", " << secs << " s";
  return passed == 200 && secs < 60.0;
}

bool oracle_gap(const std::vector<ProblemInstance>& insts, std::ostringstream& d) {
  int passed = 0;
  double worst_ratio = 0.0, worst_rel = 0.0;
  for (const auto& inst : insts) {
    const Solution sol = solve(inst);
    const OracleComparison cmp = compare_with_oracle(inst, sol, 2001);
    if (cmp.grid_points == 2001 && cmp.gap <= cmp.bound && cmp.relative_gap <= 1e-2) ++passed;
    worst_ratio = std::max(worst_ratio, cmp.gap / cmp.bound);
    worst_rel = std::max(worst_rel, cmp.relative_gap);
  }
  d << passed << "/" << insts.size() << " within L*spacing, worst gap/bound " << worst_ratio << ", worst relative gap "
    << worst_rel;
  return passed == int(insts.size());
}

ProblemInstance two_period() {
  ProblemInstance inst;
  inst.initial_level = 0.0;
  for (double c : {10.0, 20.0}) {
    PeriodSpec p;
    p.lower = 0.0;
    p.upper = 1.0;
    p.rates = {2.0, 2.0};
    p.cost = price_taker(c, c);
    inst.periods.push_back(p);
  }
  inst.regularization_eps = default_regularization(inst.periods);
  return inst;
}

bool closed_form(std::ostringstream& d) {
  const Solution sol = solve(two_period());
  const auto& s = sol.trajectory.levels;
  const double dev = std::max({std::abs(s(0)), std::abs(s(1) - 1.0), std::abs(s(2))});
  d << "objective " << sol.objective << ", levels (" << s(0) << ", " << s(1) << ", " << s(2) << ")";
  return std::abs(sol.objective + 10.0) <= 1e-6 && dev <= 1e-6;
}

bool target_interval_equivalence(std::ostringstream& d) {
  std::mt19937_64 rng(1964);
  int exact = 0, close = 0;
  double worst = 0.0;
  for (int k = 0; k < 25; ++k) {
    testing::InstanceShape shape;
    shape.horizon = 2 + testing::pick(rng, 95);
    shape.lattice_step = 1.0 / 64;
    shape.lattice_cells = 640;
    shape.price_taker_only = true;
    shape.exponential_only = true;
    shape.integer_prices = true;
    ProblemInstance inst = testing::random_instance(rng, shape);
    // Tied trades are resolved by the quadratic term; keep it small against the lattice.
    inst.regularization_eps *= 1e-3;
    const ValueTable tab = dp_solve(inst, 641);
    const Trajectory target = target_interval_rollout(inst, tab, inst.initial_level);
    const Trajectory dp = dp_policy_rollout(inst, tab, inst.initial_level);
    if ((target.levels.array() == dp.levels.array()).all()) ++exact;
    const Solution sol = solve(inst);
    const double diff = (sol.trajectory.levels - dp.levels).cwiseAbs().maxCoeff();
    worst = std::max(worst, diff / tab.spacing);
    if (diff <= tab.spacing) ++close;
  }
  d << exact << "/25 target rollouts equal the DP rollout, " << close
    << "/25 solver trajectories within one spacing (worst " << worst << " spacings)";
  return exact == 25 && close == 25;
}

bool monotone_tables(const std::vector<ProblemInstance>& insts, std::ostringstream& d) {
  double conv = 0.0, mono = 0.0;
  for (const auto& inst : insts) {
    const ValueTable tab = dp_solve(inst, 2001);
    for (int t = 0; t <= inst.horizon(); ++t) conv = std::max(conv, convexity_violation(tab, t));
    for (int t = 1; t <= inst.horizon(); ++t) {
      const MonotonicityViolation m = monotonicity_violation(tab, t);
      mono = std::max({mono, m.increment, m.landing});
    }
  }
  d << insts.size() << " tables, worst convexity defect " << conv << ", worst monotonicity defect " << mono;
  return conv <= 1e-9 && mono <= 1e-9;
}

bool month_ordering(std::ostringstream& d) {
  const ProblemInstance zero = preset_instance("month-zero");
  const Solution s0 = solve(zero);
  const Solution s1 = solve(preset_instance("month-exp1"));
  const Solution s10 = solve(preset_instance("month-exp10"));
  // Whole horizon, and days 2..29 away from the fixed start and the free end.
  auto low = [](const Solution& sol, int first, int last) {
    return sol.trajectory.levels.segment(first, last - first + 1).minCoeff();
  };
  const int T = zero.horizon();
  const double m0 = low(s0, 1, T), m1 = low(s1, 1, T), m10 = low(s10, 1, T);
  const double i0 = low(s0, 49, T - 48), i1 = low(s1, 49, T - 48), i10 = low(s10, 49, T - 48);

  const auto& s = s0.trajectory.levels;
  const double cap = zero.period(1).upper;
  const double tol = 1e-6 * cap;
  const int days = zero.horizon() / 48;
  int cycling = 0;
  for (int day = 0; day < days; ++day) {
    bool empty = false, full = false;
    for (int t = day * 48 + 1; t <= day * 48 + 48; ++t) {
      empty |= s(t) <= tol;
      full |= s(t) >= cap - tol;
    }
    cycling += empty && full;
  }
  d << "min level a=10: " << m10 << ", a=1: " << m1 << ", a=0: " << m0 << " (interior days " << i10 << ", " << i1
    << ", " << i0 << "); full cycle on " << cycling << "/" << days
    << " days";
  return m10 >= m1 && m1 >= m0 && std::abs(m0) <= tol && i10 >= i1 && i1 >= i0 && cycling >= 0.8 * days;
}

bool locality(std::ostringstream& d) {
  const ProblemInstance inst = preset_instance("month-exp1");
  const Solution sol = solve(inst);
  const auto& c = sol.certificate;
  const int T = inst.horizon();

  bool sawtooth = true;
  std::size_t seg = 1;  // boundary_times[seg - 1] < t <= boundary_times[seg]
  for (int t = 1; t <= T; ++t) {
    while (c.boundary_times[seg] < t) ++seg;
    const int h = c.horizons[std::size_t(t - 1)];
    sawtooth &= h >= t && h <= T;
    if (t > c.boundary_times[seg - 1] + 1) sawtooth &= (h - t) == (c.horizons[std::size_t(t - 2)] - (t - 1)) - 1;
  }

  const int week = 7 * 48;
  int reach = 0;
  for (int t = 1; t <= week; ++t) reach = std::max(reach, c.horizons[std::size_t(t - 1)]);
  ProblemInstance moved = inst;
  std::mt19937_64 rng(7);
  for (int t = reach + 1; t <= T; ++t) {
    auto& mi = std::get<MarketImpact>(moved.periods[std::size_t(t - 1)].cost);
    mi.c *= testing::uniform(rng, 0.5, 1.5);
  }
  const Solution other = solve(moved);
  bool same = true;
  for (int t = 0; t <= week; ++t) same &= sol.trajectory.levels(t) == other.trajectory.levels(t);
  d << "sawtooth " << (sawtooth ? "yes" : "no") << ", first-week reach " << reach << ", first week "
    << (same ? "unchanged" : "changed") << " after perturbing periods " << reach + 1 << ".." << T;
  return sawtooth && same && reach < T;
}

double best_time(const ProblemInstance& inst, int reps) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = Clock::now();
    solve(inst, unverified());
    best = std::min(best, seconds_since(t0));
  }
  return best;
}

bool scaling(std::ostringstream& d) {
  const ProblemInstance year = preset_instance("month-exp1", 365);
  const ProblemInstance half = preset_instance("month-exp1", 182);
  const auto t0 = Clock::now();
  const Solution sol = solve(year);
  const double full = seconds_since(t0);
  const double y = best_time(year, 3);
  const double h = best_time(half, 3);
  const double ratio = y / h * (182.0 / 182.5);
  d << "T=" << year.horizon() << " solved and certified in " << full << " s; doubling ratio " << ratio;
  return sol.trajectory.feasible && full < 10.0 && ratio < 2.5;
}

bool simulator(std::ostringstream& d) {
  const ProblemInstance inst = preset_instance("month-exp1");
  const Solution plan = solve(inst);
  const SimulationRun quiet = simulate(inst, ShockProcess{}, LossOfLoad{10.0}, 1, {}, &plan);
  const bool bitwise = (quiet.realized_levels.array() == plan.trajectory.levels.array()).all();

  std::mt19937_64 rng(99);
  int good = 0;
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    testing::InstanceShape shape;
    shape.horizon = 10 + testing::pick(rng, 200);
    const ProblemInstance ri = testing::random_instance(rng, shape);
    const Solution rp = solve(ri);
    const int when = 1 + testing::pick(rng, ri.horizon() - 1);
    const double cap = ri.period(when).upper;
    SimOptions opts;
    opts.scheduled.push_back({when, testing::uniform(rng, 0.05, 0.5) * cap});
    const SimulationRun r = simulate(ri, ShockProcess{}, LossOfLoad{10.0}, 5, opts, &rp);
    if (r.resolve_count != 1 || r.first_shock_period != when) continue;
    bool ok = true;
    for (int t = 0; t < when; ++t) ok &= r.realized_levels(t) == rp.trajectory.levels(t);
    const Solution tail = solve(tail_instance(ri, when, r.realized_levels(when)));
    for (int t = when; t <= ri.horizon(); ++t) {
      const double diff = std::abs(r.realized_levels(t) - tail.trajectory.levels(t - when));
      worst = std::max(worst, diff);
      ok &= diff == 0.0;
    }
    good += ok;
  }
  d << "zero-shock run " << (bitwise ? "bitwise equal" : "differs") << "; " << good
    << "/20 forced shocks match prefix and re-solved tail (worst " << worst << ")";
  return bitwise && good == 20;
}

bool penalty_estimator(std::ostringstream& d) {
  ShockProcess shocks;
  shocks.occurrence_prob = Eigen::VectorXd::Constant(1, 0.1);
  shocks.magnitude = ExponentialMagnitude{1.0};
  RateWindow rates{1e9, 1e9};
  const std::vector<double> levels{0.0, 1.0, 2.0, 5.0};
  const PenaltyEstimate est = estimate_penalty(shocks, LossOfLoad{10.0}, rates, levels, 100000, 2024);
  bool ok = true;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const double exact = std::exp(-levels[i]);
    const double z = std::abs(est.raw(Eigen::Index(i)) - exact) / est.std_error(Eigen::Index(i));
    ok &= z <= 3.0;
    d << (i ? ", " : "") << "s=" << levels[i] << ": " << est.raw(Eigen::Index(i)) << " (" << z << " se)";
  }
  return ok;
}

}  // namespace

int main() {
  run(1, "kkt certification", kkt_random);
  const std::vector<ProblemInstance> lattice = lattice_instances();
  run(2, "oracle equivalence", [&](std::ostringstream& d) { return oracle_gap(lattice, d); });
  run(3, "two-period closed form", closed_form);
  run(4, "target interval", target_interval_equivalence);
  run(5, "value monotonicity", [&](std::ostringstream& d) { return monotone_tables(lattice, d); });
  run(6, "month ordering", month_ordering);
  run(7, "locality", locality);
  run(8, "linear scaling", scaling);
  run(9, "simulator consistency", simulator);
  run(10, "penalty estimator", penalty_estimator);
  std::printf("%d failed\n", failures);
  return failures == 0 ? 0 : 1;
}
