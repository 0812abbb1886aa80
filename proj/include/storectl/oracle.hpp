// Dynamic-programming reference solutions on a level lattice, and the
// closed-form target-interval policy for price-taking stores.

#pragma once

#include "storectl/models.hpp"
#include "storectl/solver.hpp"

#include <Eigen/Core>

#include <stdexcept>
#include <vector>

namespace storectl {

class UnsupportedModel : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Value functions on a common lattice lo + i * spacing, i = 0..N-1.
///
/// Column t of `values` holds V_t, the cost of periods t+1..T from level
/// s_t; V_T = 0. Column t-1 of `policy` holds the optimal increment at
/// period t, in lattice steps, from each level s_{t-1}. Entries outside a
/// column's reachable range are +inf (values) and 0 (policy).
struct ValueTable {
  double lo = 0.0;
  double spacing = 1.0;
  Eigen::VectorXd grid;
  Eigen::MatrixXd values;
  Eigen::MatrixXi policy;
  /// [first, last] lattice index with a finite value, per column t = 0..T.
  std::vector<std::pair<int, int>> valid;

  int points() const { return static_cast<int>(grid.size()); }
  int horizon() const { return static_cast<int>(values.cols()) - 1; }
  /// Nearest lattice index to s.
  int index_of(double s) const;
  /// Optimal increment (energy) at period t from lattice level i.
  double increment(int t, int i) const { return policy(i, t - 1) * spacing; }
};

/// Backward recursion over a lattice with grid_points levels spanning the
/// union of all period bounds and the initial level.
ValueTable dp_solve(const ProblemInstance& inst, int grid_points);

/// 201 points per unit of bound range, capped at 4001.
int default_grid_points(const ProblemInstance& inst);

/// Follows the tabulated policy from the lattice point nearest s0.
Trajectory dp_policy_rollout(const ProblemInstance& inst, const ValueTable& table, double s0);

/// V_0 at the lattice point nearest the initial level.
double dp_objective(const ProblemInstance& inst, const ValueTable& table);

struct TargetInterval {
  double s_buy = 0.0;
  double s_sell = 0.0;
  int i_buy = 0;
  int i_sell = 0;
};

/// Buy and sell targets for period t: the smallest minimiser of
/// c_buy s + A_t(s) + V_t(s) and the largest minimiser of the sell analogue,
/// over the lattice points allowed at t.
TargetInterval target_interval(const ProblemInstance& inst, int t, const ValueTable& table);

/// Moves toward the target interval of each period at full rate.
Trajectory target_interval_rollout(const ProblemInstance& inst, const ValueTable& table, double s0);

/// Sum over periods of the largest |C_t'| on the rate window and |A_t'| on the bounds.
double lipschitz_bound(const ProblemInstance& inst);

/// Worst negative second difference of V_t, relative to 1 + |V_t|.
double convexity_violation(const ValueTable& table, int t);

struct MonotonicityViolation {
  double increment = 0.0;  // worst increase of x_t(s) in s
  double landing = 0.0;    // worst decrease of s + x_t(s) in s
};

/// Checks the policy column of period t.
MonotonicityViolation monotonicity_violation(const ValueTable& table, int t);

}  // namespace storectl
