// Rolling-horizon simulation under random draw-down shocks, and Monte-Carlo
// estimation of the one-period buffering penalty.

#pragma once

#include "storectl/models.hpp"
#include "storectl/solver.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <variant>
#include <vector>

namespace storectl {

struct ConstantMagnitude {
  double d = 0.0;
};
struct ExponentialMagnitude {
  double mean = 1.0;
};
struct EmpiricalMagnitude {
  std::vector<double> samples;
};
using MagnitudeLaw = std::variant<ConstantMagnitude, ExponentialMagnitude, EmpiricalMagnitude>;

struct ShockProcess {
  /// Per-period occurrence probability; a single entry applies to every period.
  Eigen::VectorXd occurrence_prob = Eigen::VectorXd::Zero(1);
  MagnitudeLaw magnitude = ConstantMagnitude{};
  /// When set, each shock is an injection instead of a draw-down with probability 1/2.
  bool signed_shocks = false;

  double prob_at(int t) const {
    return occurrence_prob.size() == 1 ? occurrence_prob(0) : occurrence_prob(t - 1);
  }
};

struct LossOfLoad {
  double a = 0.0;  // charged once whenever any demand is unmet
};
struct EnergyUnserved {
  double unit_price = 0.0;
};
using BufferingCostRule = std::variant<LossOfLoad, EnergyUnserved>;

double buffering_cost(const BufferingCostRule& rule, double shortfall);

/// Uniform draws from one root seed with an independent engine per stream
/// index (period or sample chunk), so a stream does not depend on how many
/// others were consumed.
class SubstreamRng {
 public:
  SubstreamRng(std::uint64_t root, std::uint64_t stream);
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double exponential(double mean);
  double magnitude(const MagnitudeLaw& law);

 private:
  std::mt19937_64 eng_;
};

struct ScheduledShock {
  int period = 0;
  double magnitude = 0.0;  // > 0 draws down, < 0 injects
};

struct SimOptions {
  SolverOptions solver;
  /// Shocks applied in addition to the random process.
  std::vector<ScheduledShock> scheduled;
  /// After a shock, reduce upper bounds by persistence_reduction for the next
  /// persistence_window periods.
  int persistence_window = 0;
  double persistence_reduction = 0.0;
  /// Credit served shock energy at the period's selling price instead of zero.
  bool credit_shock_outflows = false;
  /// Charged per unit of bound relaxation when a re-solve is infeasible.
  double forced_violation_penalty = 1e4;
};

struct ShockEvent {
  int period = 0;
  double magnitude = 0.0;
  double served = 0.0;
  double shortfall = 0.0;
  double cost = 0.0;
};

struct ForcedViolation {
  int period = 0;       // period whose bound was relaxed
  double amount = 0.0;  // energy by which it was relaxed
  double cost = 0.0;
};

struct SimulationRun {
  std::uint64_t seed = 0;
  Eigen::VectorXd realized_levels;  // s_0..s_T after shocks
  double trading_cost = 0.0;
  double buffering_cost = 0.0;
  double violation_cost = 0.0;
  double realized_cost = 0.0;  // sum of the three above
  std::vector<ShockEvent> shock_log;
  std::vector<ForcedViolation> forced_violations;
  int resolve_count = 0;
  int first_shock_period = 0;  // 0 when no shock occurred
};

/// Follows the plan for inst until a shock, applies it, and re-solves the
/// remaining periods from the new level. `plan` may be passed to reuse an
/// existing solution of inst.
SimulationRun simulate(const ProblemInstance& inst, const ShockProcess& shocks, const BufferingCostRule& rule,
                       std::uint64_t seed, const SimOptions& opts = {}, const Solution* plan = nullptr);

/// Runs the seeds on up to `threads` workers; results are in seed order.
std::vector<SimulationRun> simulate_many(const ProblemInstance& inst, const ShockProcess& shocks,
                                         const BufferingCostRule& rule, const std::vector<std::uint64_t>& seeds,
                                         const SimOptions& opts = {}, int threads = 0);

struct PenaltyEstimate {
  TabulatedPenalty model;     // convex, nonincreasing projection
  Eigen::VectorXd raw;        // sample means per level
  Eigen::VectorXd std_error;  // standard errors of the raw means
  double residual = 0.0;      // max |model - raw|
};

/// Expected buffering cost of one period's shock as a function of the planned
/// level, assuming the store is restored to plan right after the shock.
/// Levels are used in increasing order; all levels share the same draws.
PenaltyEstimate estimate_penalty(const ShockProcess& shocks, const BufferingCostRule& rule, const RateWindow& rates,
                                 const std::vector<double>& level_grid, long n_samples, std::uint64_t seed,
                                 int threads = 0);

/// Least-squares fit with nondecreasing, nonpositive slopes between consecutive
/// levels (weighted isotonic regression on the secant slopes).
Eigen::VectorXd convex_nonincreasing_fit(const Eigen::VectorXd& levels, const Eigen::VectorXd& values);

}  // namespace storectl
