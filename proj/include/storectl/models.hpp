// Cost functions, penalty functions and problem instances for a single
// energy store that trades against a price series and keeps a buffer
// against random draw-downs.
//
// Conventions used throughout the library:
//   * periods are numbered t = 1..T; level s_t is the store content at the
//     end of period t and s_0 is the initial level;
//   * x_t = s_t - s_{t-1} is the planned increment (x > 0 buys, x < 0 sells);
//   * vectors indexed by period store period t at position t - 1, vectors of
//     levels store s_t at position t.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace storectl {

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Closed interval [lo, hi]. Either end may be infinite.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double v, double tol = 0.0) const { return v >= lo - tol && v <= hi + tol; }
  double width() const { return hi - lo; }
};

/// Power limits for one period: admissible increments are [-p_out, p_in].
struct RateWindow {
  double p_in = 1.0;
  double p_out = 1.0;

  bool contains(double x, double tol = 0.0) const { return x >= -p_out - tol && x <= p_in + tol; }
  double max_rate() const { return std::max(p_in, p_out); }
};

// ---------------------------------------------------------------------------
// Trading cost C_t(x)

/// Linear buy/sell prices with c_sell <= c_buy.
struct PriceTaker {
  double c_buy = 0.0;
  double c_sell = 0.0;
};

/// c x (1 + delta x) when buying, eta c x (1 + delta x) when selling.
struct MarketImpact {
  double c = 0.0;
  double delta = 0.0;
  double eta = 1.0;
};

/// Convex piecewise-linear cost with C(0) = 0. Each breakpoint (x_k, m_k)
/// gives the slope m_k on [x_k, x_{k+1}); the first slope also applies to the
/// left of x_0.
struct PiecewiseLinear {
  std::vector<std::pair<double, double>> breakpoints;
};

using CostModel = std::variant<PriceTaker, MarketImpact, PiecewiseLinear>;

/// Builds the market-impact model with sell prices reduced by eta.
inline CostModel market_impact(double c, double delta, double eta) { return MarketImpact{c, delta, eta}; }
inline CostModel price_taker(double c_buy, double c_sell) { return PriceTaker{c_buy, c_sell}; }

double cost_eval(const CostModel& cost, const RateWindow& rates, double x);

/// [left derivative, right derivative] of C at x.
Interval cost_subgradient(const CostModel& cost, const RateWindow& rates, double x);

/// Unique minimiser of C(x) + eps x^2 - nu x over [-p_out, p_in].
///
/// With eps = 0 and a flat stretch of C(x) - nu x the left end of the flat
/// stretch is returned; callers that need continuity in nu must pass eps > 0
/// for models that are not strictly convex.
double argmin_tilted(const CostModel& cost, const RateWindow& rates, double nu, double eps);

/// True when C is strictly convex on every rate window (so eps = 0 is safe).
bool is_strictly_convex(const CostModel& cost);

/// Slope scale of the model near x = 0, used for tolerances and defaults.
double reference_slope(const CostModel& cost);

// ---------------------------------------------------------------------------
// Buffering penalty A_t(s)

struct ZeroPenalty {};

/// a exp(-kappa s).
struct ExponentialPenalty {
  double a = 0.0;
  double kappa = 1.0;
};

/// b / s for s >= floor, extended linearly (value and slope continuous) below.
struct InversePenalty {
  double b = 0.0;
  double floor = 1e-3;
};

/// Piecewise-linear interpolation through (levels[k], values[k]); linear
/// extrapolation with the end slopes outside the table.
struct TabulatedPenalty {
  Eigen::VectorXd levels;
  Eigen::VectorXd values;
};

using PenaltyModel = std::variant<ZeroPenalty, ExponentialPenalty, InversePenalty, TabulatedPenalty>;

double penalty_eval(const PenaltyModel& p, double s);

/// A'(s). At the knots of a tabulated penalty this is the left slope.
double penalty_derivative(const PenaltyModel& p, double s);

/// [left slope, right slope]; a singleton wherever A is differentiable.
Interval penalty_subgradient(const PenaltyModel& p, double s);

/// Knots where A is not differentiable (empty for the smooth families).
const Eigen::VectorXd* penalty_knots(const PenaltyModel& p);

/// Upper bound on |A'(s)| for s in [lo, hi].
double penalty_slope_bound(const PenaltyModel& p, double lo, double hi);

// ---------------------------------------------------------------------------
// Problem instance

struct PeriodSpec {
  double lower = 0.0;
  double upper = 0.0;
  RateWindow rates;
  CostModel cost = PriceTaker{};
  PenaltyModel penalty = ZeroPenalty{};
};

struct ProblemInstance {
  double initial_level = 0.0;
  std::vector<PeriodSpec> periods;
  /// Strength of the eps x^2 term added to costs that are not strictly convex.
  double regularization_eps = 0.0;

  int horizon() const { return static_cast<int>(periods.size()); }
  const PeriodSpec& period(int t) const { return periods[static_cast<std::size_t>(t - 1)]; }

  /// Regularisation actually applied in period t.
  double eps_at(int t) const { return is_strictly_convex(period(t).cost) ? 0.0 : regularization_eps; }
};

/// 1e-6 x median |reference slope| / max rate, or 1e-6 when all slopes vanish.
double default_regularization(const std::vector<PeriodSpec>& periods);

/// Largest bound magnitude (at least 1); tolerances on levels scale with it.
double energy_scale(const ProblemInstance& inst);

/// Median absolute reference slope (at least 1); tolerances on tilts scale with it.
double slope_scale(const ProblemInstance& inst);

/// Sum over periods of C_t(x_t) + A_t(s_t) for levels s_0..s_T.
double objective_value(const ProblemInstance& inst, const Eigen::VectorXd& levels);

/// Sum of the trading part C_t(x_t) only.
double trading_cost(const ProblemInstance& inst, const Eigen::VectorXd& levels);

struct ValidationReport {
  enum class Issue { None, BadHorizon, BadRates, BadBounds, NonConvexCost, BadPenalty, Infeasible };

  Issue issue = Issue::None;
  int period = 0;  // earliest offending period, 0 when not period-specific
  std::string message;
  /// A feasible trajectory s_0..s_T when the instance is valid.
  Eigen::VectorXd feasible_levels;

  bool ok() const { return issue == Issue::None; }
};

ValidationReport validate_instance(const ProblemInstance& inst);

/// Forward reachable intervals [lo_t, hi_t] of s_t, t = 0..T, intersected
/// with the bounds. An empty interval marks the first unreachable period.
std::vector<Interval> reachable_envelope(const ProblemInstance& inst);

}  // namespace storectl
