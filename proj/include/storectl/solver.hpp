// Solver for the deterministic store-control program
//
//   minimise  sum_t C_t(s_t - s_{t-1}) + A_t(s_t)
//   s.t.      lower_t <= s_t <= upper_t,  -p_out_t <= s_t - s_{t-1} <= p_in_t
//
// by forward sweeps of the tilt recursion and a one-dimensional search for the
// tilt at the start of each segment between bound contacts.

#pragma once

#include "storectl/models.hpp"

#include <Eigen/Core>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace storectl {

struct SolverOptions {
  /// Levels within snap_tol * energy_scale of a bound are placed on it.
  double snap_tol = 1e-9;
  /// Wrong-signed multipliers up to clamp_tol * slope_scale are clamped to zero.
  double clamp_tol = 1e-8;
  /// Loose contact tolerance (x energy_scale) used only when no exact contact is found.
  double fallback_tol = 1e-6;
  /// Certify every solution with verify_kkt before returning it.
  bool verify = true;
  double verify_tol = 1e-6;
  int max_bracket_doublings = 200;
};

enum class SweepStatus {
  Feasible,       // reached T with the terminal condition satisfied
  ViolatedBelow,  // fell below a lower bound at violation_time
  ViolatedAbove,  // rose above an upper bound at violation_time
  TerminalLow,    // reached T but the terminal tilt is too low
  TerminalHigh,   // reached T but the terminal tilt is too high
};

struct SweepResult {
  int start_period = 0;
  /// levels(k) is s at period start_period + k; levels(0) is the start level.
  /// When a bound is violated the offending level is the last entry.
  Eigen::VectorXd levels;
  /// tilts(k) is nu at period start_period + 1 + k.
  Eigen::VectorXd tilts;
  /// Penalty slope used in the tilt update at period start_period + 1 + k.
  Eigen::VectorXd penalty_slopes;
  SweepStatus status = SweepStatus::Feasible;
  /// Period of the violation, or T when the sweep reached the end.
  int violation_time = 0;
  /// nu_T + A'_T(s_T); meaningful only when the sweep reached T.
  double terminal_excess = 0.0;

  double level_at(int t) const { return levels(t - start_period); }
  double tilt_at(int t) const { return tilts(t - start_period - 1); }
  double slope_at(int t) const { return penalty_slopes(t - start_period - 1); }
  /// Last period with an in-bounds level.
  int last_valid_period() const {
    const bool violated = status == SweepStatus::ViolatedBelow || status == SweepStatus::ViolatedAbove;
    return violated ? violation_time - 1 : violation_time;
  }
};

enum class TrialClass { InM, InMPrime, Feasible };

/// Runs s_t = s_{t-1} + argmin_tilted(nu_t), nu_{t+1} = nu_t + A'_t(s_t) from
/// start_period until the first bound violation or the end of the horizon.
SweepResult forward_sweep(const ProblemInstance& inst, int start_period, double start_level, double nu_start,
                          const SolverOptions& opts = {});

/// InM: tilt too low (violation below or terminal tilt too low).
/// InMPrime: tilt too high. Feasible: neither.
TrialClass classify_trial(const SweepResult& sweep);

/// A known trial point for the tilt search, e.g. the continuation of the
/// previous segment.
struct TiltHint {
  double value = 0.0;
};

struct NuBarResult {
  /// Largest tilt found in M, and the smallest found outside it. They are
  /// adjacent doubles on return.
  double nu_lo = 0.0;
  double nu_hi = 0.0;
  SweepResult below;  // sweep at nu_lo
  SweepResult above;  // sweep at nu_hi
  int trials = 0;

  /// nu_hi when that sweep is feasible, nu_lo otherwise.
  double nu_bar() const { return above.status == SweepStatus::Feasible ? nu_hi : nu_lo; }
  const SweepResult& final_sweep() const { return above.status == SweepStatus::Feasible ? above : below; }
};

/// Bisection for sup M of the trial tilts at period start_period + 1.
NuBarResult find_nu_bar(const ProblemInstance& inst, int start_period, double start_level,
                        const SolverOptions& opts = {}, std::vector<TiltHint> hints = {});

struct Trajectory {
  Eigen::VectorXd levels;      // s_0..s_T
  Eigen::VectorXd increments;  // x_1..x_T
  bool feasible = false;
};

Trajectory make_trajectory(const ProblemInstance& inst, Eigen::VectorXd levels, double tol = 1e-7);

struct DualCertificate {
  Eigen::VectorXd lambda;          // lambda_t, t = 1..T
  Eigen::VectorXd nu;              // nu_t, t = 1..T (nu_{T+1} = 0)
  Eigen::VectorXd alpha;           // lower-bound sensitivities, >= 0
  Eigen::VectorXd beta;            // upper-bound sensitivities, <= 0
  Eigen::VectorXd penalty_slopes;  // selected A'_t(s_t)
  std::vector<int> boundary_times; // 0 = T_0 < T_1 < ... < T_k = T
  std::vector<int> horizons;       // look-ahead period for t = 1..T
};

struct Solution {
  Trajectory trajectory;
  DualCertificate certificate;
  double objective = 0.0;
  int segments = 0;
  int sweeps = 0;
};

class InfeasibleInstance : public std::runtime_error {
 public:
  InfeasibleInstance(const std::string& what, ValidationReport report)
      : std::runtime_error(what), report_(std::move(report)) {}
  const ValidationReport& report() const { return report_; }

 private:
  ValidationReport report_;
};

class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, std::optional<Solution> partial = std::nullopt)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const std::optional<Solution>& partial() const { return partial_; }

 private:
  std::optional<Solution> partial_;
};

/// Solves the instance. Throws InfeasibleInstance when validation fails and
/// SolverError when the certificate cannot be assembled or fails verification.
Solution solve(const ProblemInstance& inst, const SolverOptions& opts = {});

struct KktCondition {
  std::string name;
  bool passed = true;
  double worst = 0.0;          // largest violation as a multiple of tol; fails above 1
  std::vector<int> failures;   // offending periods
};

struct KktReport {
  KktCondition primal;         // bounds and rate windows
  KktCondition slackness;      // sign of lambda against bound contact
  KktCondition tilt;           // nu recursion with a penalty subgradient
  KktCondition stationarity;   // nu_t in the subgradient of the regularised cost
  KktCondition sensitivity;    // lambda = alpha + beta with the right signs
  bool passed() const {
    return primal.passed && slackness.passed && tilt.passed && stationarity.passed && sensitivity.passed;
  }
};

/// Checks a candidate solution; never throws on a failed check. Tilt-valued
/// conditions are scaled by slope_scale(inst), level-valued ones by
/// energy_scale(inst).
KktReport verify_kkt(const ProblemInstance& inst, const Solution& sol, double tol = 1e-6);

struct CapacitySensitivity {
  Eigen::VectorXd alpha;  // d objective / d lower_t
  Eigen::VectorXd beta;   // d objective / d upper_t
};

/// Splits lambda into lower and upper bound multipliers by bound contact.
CapacitySensitivity capacity_sensitivity(const ProblemInstance& inst, const Solution& sol, double snap_tol = 1e-9);

/// Copy of periods first+1..T with a new initial level.
ProblemInstance tail_instance(const ProblemInstance& inst, int first, double level);

}  // namespace storectl
