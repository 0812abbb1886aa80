#include "random_instances.hpp"
#include "storectl/oracle.hpp"
#include "storectl/solver.hpp"

#include <doctest.h>

#include <cmath>

using namespace storectl;
using doctest::Approx;

namespace {

ProblemInstance flat(int T, double c_buy, double c_sell, double cap = 1.0, double rate = 1.0) {
  ProblemInstance inst;
  for (int t = 1; t <= T; ++t) {
    PeriodSpec p;
    p.upper = cap;
    p.rates = {rate, rate};
    p.cost = price_taker(c_buy, c_sell);
    inst.periods.push_back(p);
  }
  inst.regularization_eps = default_regularization(inst.periods);
  return inst;
}

// Rates do not bind, so the capacity alone stops the purchase.
ProblemInstance two_period(double rate = 2.0) {
  ProblemInstance inst = flat(2, 10.0, 10.0, 1.0, rate);
  inst.periods[1].cost = price_taker(20.0, 20.0);
  return inst;
}

}  // namespace

TEST_CASE("forward sweep examples") {
  ProblemInstance one = flat(1, 30.0, 30.0, 5.0);
  one.initial_level = 2.0;
  const SweepResult up = forward_sweep(one, 0, 2.0, 31.0);
  CHECK(up.level_at(1) == Approx(3.0));

  const ProblemInstance inst = two_period(1.0);
  const SweepResult mid = forward_sweep(inst, 0, 0.0, 15.0);
  CHECK(mid.status == SweepStatus::Feasible);
  CHECK(mid.level_at(1) == Approx(1.0));
  CHECK(mid.level_at(2) == Approx(0.0));
  CHECK(mid.tilt_at(2) == Approx(15.0));

  const SweepResult low = forward_sweep(inst, 0, 0.0, 5.0);
  CHECK(low.status == SweepStatus::ViolatedBelow);
  CHECK(low.violation_time == 1);
}

TEST_CASE("classify_trial") {
  SweepResult r;
  r.status = SweepStatus::ViolatedBelow;
  r.violation_time = 3;
  CHECK(classify_trial(r) == TrialClass::InM);
  r.status = SweepStatus::ViolatedAbove;
  r.violation_time = 7;
  CHECK(classify_trial(r) == TrialClass::InMPrime);
  r.status = SweepStatus::Feasible;
  CHECK(classify_trial(r) == TrialClass::Feasible);
  r.status = SweepStatus::TerminalLow;
  CHECK(classify_trial(r) == TrialClass::InM);
  r.status = SweepStatus::TerminalHigh;
  CHECK(classify_trial(r) == TrialClass::InMPrime);
}

TEST_CASE("find_nu_bar examples") {
  const ProblemInstance constant = flat(6, 40.0, 34.0);
  const NuBarResult a = find_nu_bar(constant, 0, 0.0);
  CHECK(a.nu_bar() == Approx(34.0).epsilon(1e-6));
  CHECK(a.final_sweep().status == SweepStatus::Feasible);
  CHECK(a.final_sweep().levels.cwiseAbs().maxCoeff() <= 1e-9);
  CHECK(std::nextafter(a.nu_lo, INFINITY) == a.nu_hi);

  const NuBarResult b = find_nu_bar(two_period(1.0), 0, 0.0);
  CHECK(std::abs(b.nu_bar() - 10.0) <= 1e-4);
  CHECK(b.final_sweep().level_at(1) == Approx(1.0));
  CHECK(b.final_sweep().level_at(2) == Approx(0.0).scale(1));

  const NuBarResult c = find_nu_bar(flat(4, 25.0, 25.0), 0, 0.0);
  CHECK(c.nu_bar() == Approx(25.0).epsilon(1e-6));
}

TEST_CASE("two-period solve") {
  const ProblemInstance inst = two_period();
  const Solution sol = solve(inst);
  CHECK(sol.objective == Approx(-10.0).epsilon(1e-9));
  CHECK(sol.trajectory.levels(1) == Approx(1.0));
  CHECK(std::abs(sol.trajectory.levels(2)) <= 1e-9);
  CHECK(sol.certificate.boundary_times == std::vector<int>{0, 1, 2});
  CHECK(verify_kkt(inst, sol).passed());

  const CapacitySensitivity cs = capacity_sensitivity(inst, sol);
  CHECK(cs.beta(0) <= 0.0);
  CHECK(cs.beta(0) == Approx(sol.certificate.lambda(0)));
  CHECK(cs.beta(1) == 0.0);
  // d objective / d E_1 by re-solving.
  auto moved = [&](double d) {
    ProblemInstance m = inst;
    m.periods[0].upper += d;
    return solve(m).objective;
  };
  const double fd = (moved(1e-3) - moved(-1e-3)) / 2e-3;
  CHECK(cs.beta(0) == Approx(fd).epsilon(1e-3));
}

TEST_CASE("capacity reached at the rate limit") {
  // The rate window carries the multiplier, so period 1 is not a boundary time.
  const ProblemInstance inst = two_period(1.0);
  const Solution sol = solve(inst);
  CHECK(sol.objective == Approx(-10.0).epsilon(1e-9));
  CHECK(sol.certificate.lambda(0) == 0.0);
  CHECK(sol.certificate.boundary_times == std::vector<int>{0, 2});
}

TEST_CASE("single period, both actions cost money") {
  ProblemInstance inst = flat(1, 20.0, 0.0, 5.0);
  inst.initial_level = 2.0;
  const Solution sol = solve(inst);
  CHECK(sol.trajectory.levels(1) == Approx(2.0));
  CHECK(sol.objective == Approx(0.0).scale(1));
}

TEST_CASE("verify_kkt rejects a wrong trajectory") {
  const ProblemInstance inst = two_period();
  Solution sol = solve(inst);
  Eigen::VectorXd s(3);
  s << 0.0, 0.5, 0.2;
  sol.trajectory = make_trajectory(inst, s);
  sol.certificate.lambda.setZero();
  sol.objective = objective_value(inst, s);
  CHECK_FALSE(verify_kkt(inst, sol).passed());

  ProblemInstance idle = flat(3, 0.0, 0.0);
  Solution zero;
  zero.trajectory = make_trajectory(idle, Eigen::VectorXd::Zero(4));
  zero.certificate.lambda = zero.certificate.nu = zero.certificate.alpha = zero.certificate.beta =
      zero.certificate.penalty_slopes = Eigen::VectorXd::Zero(3);
  zero.certificate.boundary_times = {0, 3};
  zero.certificate.horizons = {3, 3, 3};
  CHECK(verify_kkt(idle, zero).passed());
}

TEST_CASE("interior trajectories have zero sensitivities") {
  ProblemInstance inst = flat(8, 40.0, 40.0, 10.0);
  inst.initial_level = 5.0;
  for (auto& p : inst.periods) p.penalty = ExponentialPenalty{10.0, 1.0};
  inst.periods.back().penalty = ZeroPenalty{};
  inst.periods.back().lower = inst.periods.back().upper = 5.0;
  const Solution sol = solve(inst);
  const CapacitySensitivity cs = capacity_sensitivity(inst, sol);
  for (int t = 1; t < 8; ++t) {
    CHECK(cs.alpha(t - 1) == 0.0);
    CHECK(cs.beta(t - 1) == 0.0);
  }
}

TEST_CASE("terminal target sensitivity matches a re-solve") {
  ProblemInstance inst = flat(12, 40.0, 34.0, 10.0);
  for (int t = 1; t <= 12; ++t) std::get<PriceTaker>(inst.periods[t - 1].cost).c_buy += 5.0 * std::sin(t);
  for (int t = 1; t <= 12; ++t) std::get<PriceTaker>(inst.periods[t - 1].cost).c_sell += 5.0 * std::sin(t);
  inst.periods.back().lower = inst.periods.back().upper = 3.0;
  const Solution sol = solve(inst);
  const CapacitySensitivity cs = capacity_sensitivity(inst, sol);
  CHECK(cs.alpha(11) >= 0.0);
  ProblemInstance m = inst;
  m.periods.back().lower = m.periods.back().upper = 3.01;
  const double fd = (solve(m).objective - sol.objective) / 0.01;
  CHECK(cs.alpha(11) + cs.beta(11) == Approx(fd).epsilon(1e-2));
}

TEST_CASE("infeasible instances are reported") {
  ProblemInstance inst = flat(6, 40.0, 34.0, 10.0);
  inst.periods[4].lower = 6.0;
  CHECK_THROWS_AS(solve(inst), InfeasibleInstance);
}

TEST_CASE("tail instance") {
  const ProblemInstance inst = flat(10, 40.0, 34.0, 10.0);
  const ProblemInstance tail = tail_instance(inst, 4, 2.5);
  CHECK(tail.horizon() == 6);
  CHECK(tail.initial_level == 2.5);
  CHECK(tail.regularization_eps == inst.regularization_eps);
}

TEST_CASE("random instances certify and agree with a coarse oracle") {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 30; ++k) {
    testing::InstanceShape shape;
    shape.horizon = 5 + testing::pick(rng, 40);
    shape.lattice_step = 0.01;
    shape.lattice_cells = 500;
    const ProblemInstance inst = testing::random_instance(rng, shape);
    const Solution sol = solve(inst);
    CHECK(verify_kkt(inst, sol).passed());
    CHECK(sol.trajectory.feasible);
    CHECK(sol.objective == Approx(objective_value(inst, sol.trajectory.levels)));
    const ValueTable tab = dp_solve(inst, 501);
    CHECK(std::abs(dp_objective(inst, tab) - sol.objective) <= lipschitz_bound(inst) * tab.spacing);
    // Horizons never look back and boundary times are increasing.
    const auto& c = sol.certificate;
    for (int t = 1; t <= inst.horizon(); ++t) CHECK(c.horizons[std::size_t(t - 1)] >= t);
    for (std::size_t i = 1; i < c.boundary_times.size(); ++i) CHECK(c.boundary_times[i] > c.boundary_times[i - 1]);
    CHECK(c.boundary_times.back() == inst.horizon());
  }
}
