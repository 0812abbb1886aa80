#include "storectl/models.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace storectl {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_window(const RateWindow& rates, double x) {
  const double tol = 1e-7 * (1.0 + rates.max_rate());
  if (!rates.contains(x, tol)) {
    std::ostringstream msg;
    msg << "increment " << x << " outside rate window [" << -rates.p_out << ", " << rates.p_in << "]";
    throw DomainError(msg.str());
  }
}

// Slope of a piecewise-linear cost just left / right of y.
double pwl_slope_right(const PiecewiseLinear& c, double y) {
  double m = c.breakpoints.front().second;
  for (const auto& [x, slope] : c.breakpoints) {
    if (x <= y) m = slope;
    else break;
  }
  return m;
}

double pwl_slope_left(const PiecewiseLinear& c, double y) {
  double m = c.breakpoints.front().second;
  for (const auto& [x, slope] : c.breakpoints) {
    if (x < y) m = slope;
    else break;
  }
  return m;
}

// Antiderivative of the slope function, zero at the first breakpoint.
double pwl_antiderivative(const PiecewiseLinear& c, double y) {
  const auto& bp = c.breakpoints;
  if (y <= bp.front().first) return bp.front().second * (y - bp.front().first);
  double acc = 0.0;
  for (std::size_t k = 0; k < bp.size(); ++k) {
    const double x0 = bp[k].first;
    const double x1 = k + 1 < bp.size() ? bp[k + 1].first : kInf;
    if (y <= x1) return acc + bp[k].second * (y - x0);
    acc += bp[k].second * (x1 - x0);
  }
  return acc;
}

double pwl_argmin(const PiecewiseLinear& c, const RateWindow& rates, double nu, double eps) {
  std::vector<double> pts{-rates.p_out};
  for (const auto& bp : c.breakpoints) {
    if (bp.first > -rates.p_out && bp.first < rates.p_in) pts.push_back(bp.first);
  }
  pts.push_back(rates.p_in);
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double m = pwl_slope_right(c, pts[i]);
    if (m + 2.0 * eps * pts[i] - nu >= 0.0) return pts[i];
    if (m + 2.0 * eps * pts[i + 1] - nu > 0.0) return (nu - m) / (2.0 * eps);
  }
  return rates.p_in;
}

struct TabSlopes {
  const TabulatedPenalty& tab;
  Eigen::Index n() const { return tab.levels.size(); }
  double slope(Eigen::Index k) const {
    return (tab.values(k + 1) - tab.values(k)) / (tab.levels(k + 1) - tab.levels(k));
  }
  // Index of the first knot >= s.
  Eigen::Index first_knot_at_or_above(double s) const {
    const double* b = tab.levels.data();
    return std::lower_bound(b, b + n(), s) - b;
  }
};

void check_tabulated(const TabulatedPenalty& t) {
  if (t.levels.size() < 2 || t.levels.size() != t.values.size())
    throw DomainError("tabulated penalty needs at least two (level, value) pairs");
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace

// ---------------------------------------------------------------------------

double cost_eval(const CostModel& cost, const RateWindow& rates, double x) {
  check_window(rates, x);
  return std::visit(Overloaded{
                        [&](const PriceTaker& c) { return x >= 0.0 ? c.c_buy * x : c.c_sell * x; },
                        [&](const MarketImpact& c) {
                          const double base = c.c * x * (1.0 + c.delta * x);
                          return x >= 0.0 ? base : c.eta * base;
                        },
                        [&](const PiecewiseLinear& c) {
                          if (c.breakpoints.empty()) return 0.0;
                          return pwl_antiderivative(c, x) - pwl_antiderivative(c, 0.0);
                        },
                    },
                    cost);
}

Interval cost_subgradient(const CostModel& cost, const RateWindow& rates, double x) {
  check_window(rates, x);
  return std::visit(Overloaded{
                        [&](const PriceTaker& c) {
                          if (x > 0.0) return Interval{c.c_buy, c.c_buy};
                          if (x < 0.0) return Interval{c.c_sell, c.c_sell};
                          return Interval{c.c_sell, c.c_buy};
                        },
                        [&](const MarketImpact& c) {
                          const double d = c.c * (1.0 + 2.0 * c.delta * x);
                          if (x > 0.0) return Interval{d, d};
                          if (x < 0.0) return Interval{c.eta * d, c.eta * d};
                          return Interval{c.eta * c.c, c.c};
                        },
                        [&](const PiecewiseLinear& c) {
                          if (c.breakpoints.empty()) return Interval{0.0, 0.0};
                          return Interval{pwl_slope_left(c, x), pwl_slope_right(c, x)};
                        },
                    },
                    cost);
}

double argmin_tilted(const CostModel& cost, const RateWindow& rates, double nu, double eps) {
  const double lo = -rates.p_out;
  const double hi = rates.p_in;
  return std::visit(Overloaded{
                        [&](const PriceTaker& c) {
                          if (nu > c.c_buy) return eps > 0.0 ? std::min((nu - c.c_buy) / (2.0 * eps), hi) : hi;
                          if (nu < c.c_sell) return eps > 0.0 ? std::max((nu - c.c_sell) / (2.0 * eps), lo) : lo;
                          return 0.0;
                        },
                        [&](const MarketImpact& c) {
                          if (nu > c.c) {
                            const double k = 2.0 * c.c * c.delta + 2.0 * eps;
                            return k > 0.0 ? std::min((nu - c.c) / k, hi) : hi;
                          }
                          const double sell = c.eta * c.c;
                          if (nu < sell) {
                            const double k = 2.0 * sell * c.delta + 2.0 * eps;
                            return k > 0.0 ? std::max((nu - sell) / k, lo) : lo;
                          }
                          return 0.0;
                        },
                        [&](const PiecewiseLinear& c) {
                          if (c.breakpoints.empty()) {
                            if (eps > 0.0) return std::clamp(nu / (2.0 * eps), lo, hi);
                            return nu > 0.0 ? hi : (nu < 0.0 ? lo : 0.0);
                          }
                          return pwl_argmin(c, rates, nu, eps);
                        },
                    },
                    cost);
}

bool is_strictly_convex(const CostModel& cost) {
  if (const auto* m = std::get_if<MarketImpact>(&cost)) return m->c > 0.0 && m->delta > 0.0 && m->eta > 0.0;
  return false;
}

double reference_slope(const CostModel& cost) {
  return std::visit(Overloaded{
                        [](const PriceTaker& c) { return std::max(std::abs(c.c_buy), std::abs(c.c_sell)); },
                        [](const MarketImpact& c) { return std::abs(c.c); },
                        [](const PiecewiseLinear& c) {
                          if (c.breakpoints.empty()) return 0.0;
                          return std::max(std::abs(pwl_slope_left(c, 0.0)), std::abs(pwl_slope_right(c, 0.0)));
                        },
                    },
                    cost);
}

// ---------------------------------------------------------------------------

double penalty_eval(const PenaltyModel& p, double s) {
  return std::visit(Overloaded{
                        [](const ZeroPenalty&) { return 0.0; },
                        [&](const ExponentialPenalty& e) { return e.a * std::exp(-e.kappa * s); },
                        [&](const InversePenalty& v) {
                          if (s < 0.0) throw DomainError("inverse penalty evaluated at a negative level");
                          if (s >= v.floor) return v.b / s;
                          return v.b / v.floor - v.b / (v.floor * v.floor) * (s - v.floor);
                        },
                        [&](const TabulatedPenalty& t) {
                          check_tabulated(t);
                          const TabSlopes ts{t};
                          const auto n = ts.n();
                          if (s <= t.levels(0)) return t.values(0) + ts.slope(0) * (s - t.levels(0));
                          if (s >= t.levels(n - 1)) return t.values(n - 1) + ts.slope(n - 2) * (s - t.levels(n - 1));
                          const auto k = ts.first_knot_at_or_above(s);
                          if (t.levels(k) == s) return t.values(k);
                          return t.values(k - 1) + ts.slope(k - 1) * (s - t.levels(k - 1));
                        },
                    },
                    p);
}

double penalty_derivative(const PenaltyModel& p, double s) {
  return std::visit(Overloaded{
                        [](const ZeroPenalty&) { return 0.0; },
                        [&](const ExponentialPenalty& e) { return -e.a * e.kappa * std::exp(-e.kappa * s); },
                        [&](const InversePenalty& v) {
                          if (s < 0.0) throw DomainError("inverse penalty evaluated at a negative level");
                          const double z = std::max(s, v.floor);
                          return -v.b / (z * z);
                        },
                        [&](const TabulatedPenalty& t) {
                          check_tabulated(t);
                          const TabSlopes ts{t};
                          const auto k = ts.first_knot_at_or_above(s);
                          if (k == 0) return ts.slope(0);
                          if (k >= ts.n()) return ts.slope(ts.n() - 2);
                          return ts.slope(k - 1);
                        },
                    },
                    p);
}

Interval penalty_subgradient(const PenaltyModel& p, double s) {
  if (const auto* t = std::get_if<TabulatedPenalty>(&p)) {
    check_tabulated(*t);
    const TabSlopes ts{*t};
    const auto k = ts.first_knot_at_or_above(s);
    if (k > 0 && k < ts.n() - 1 && t->levels(k) == s) return {ts.slope(k - 1), ts.slope(k)};
  }
  const double d = penalty_derivative(p, s);
  return {d, d};
}

const Eigen::VectorXd* penalty_knots(const PenaltyModel& p) {
  if (const auto* t = std::get_if<TabulatedPenalty>(&p)) return &t->levels;
  return nullptr;
}

double penalty_slope_bound(const PenaltyModel& p, double lo, double hi) {
  return std::visit(Overloaded{
                        [](const ZeroPenalty&) { return 0.0; },
                        [&](const ExponentialPenalty& e) {
                          const double at = e.kappa >= 0.0 ? lo : hi;
                          return std::abs(e.a * e.kappa) * std::exp(-e.kappa * at);
                        },
                        [&](const InversePenalty& v) {
                          const double z = std::max(lo, v.floor);
                          return std::abs(v.b) / (z * z);
                        },
                        [&](const TabulatedPenalty& t) {
                          check_tabulated(t);
                          const TabSlopes ts{t};
                          double m = 0.0;
                          for (Eigen::Index k = 0; k + 1 < ts.n(); ++k) m = std::max(m, std::abs(ts.slope(k)));
                          return m;
                        },
                    },
                    p);
}

// ---------------------------------------------------------------------------

double default_regularization(const std::vector<PeriodSpec>& periods) {
  std::vector<double> slopes;
  double max_rate = 0.0;
  slopes.reserve(periods.size());
  for (const auto& p : periods) {
    slopes.push_back(reference_slope(p.cost));
    max_rate = std::max(max_rate, p.rates.max_rate());
  }
  const double med = median(std::move(slopes));
  if (med <= 0.0 || max_rate <= 0.0) return 1e-6;
  return 1e-6 * med / max_rate;
}

double energy_scale(const ProblemInstance& inst) {
  double e = std::max(1.0, std::abs(inst.initial_level));
  for (const auto& p : inst.periods) e = std::max(e, std::abs(p.upper));
  return e;
}

double slope_scale(const ProblemInstance& inst) {
  std::vector<double> slopes;
  slopes.reserve(inst.periods.size());
  for (const auto& p : inst.periods) slopes.push_back(reference_slope(p.cost));
  return std::max(1.0, median(std::move(slopes)));
}

double trading_cost(const ProblemInstance& inst, const Eigen::VectorXd& levels) {
  double total = 0.0;
  for (int t = 1; t <= inst.horizon(); ++t) {
    const auto& p = inst.period(t);
    total += cost_eval(p.cost, p.rates, levels(t) - levels(t - 1));
  }
  return total;
}

double objective_value(const ProblemInstance& inst, const Eigen::VectorXd& levels) {
  double total = 0.0;
  for (int t = 1; t <= inst.horizon(); ++t) {
    const auto& p = inst.period(t);
    total += cost_eval(p.cost, p.rates, levels(t) - levels(t - 1)) + penalty_eval(p.penalty, levels(t));
  }
  return total;
}

std::vector<Interval> reachable_envelope(const ProblemInstance& inst) {
  std::vector<Interval> env;
  env.reserve(inst.periods.size() + 1);
  env.push_back({inst.initial_level, inst.initial_level});
  for (const auto& p : inst.periods) {
    const Interval& prev = env.back();
    Interval next{std::max(p.lower, prev.lo - p.rates.p_out), std::min(p.upper, prev.hi + p.rates.p_in)};
    env.push_back(next);
    if (next.lo > next.hi) break;
  }
  return env;
}

namespace {

ValidationReport fail(ValidationReport::Issue issue, int period, const std::string& what) {
  ValidationReport r;
  r.issue = issue;
  r.period = period;
  std::ostringstream msg;
  if (period > 0) msg << "period " << period << ": ";
  msg << what;
  r.message = msg.str();
  return r;
}

std::string check_cost(const CostModel& cost, const RateWindow& rates) {
  if (const auto* c = std::get_if<PriceTaker>(&cost)) {
    if (!std::isfinite(c->c_buy) || !std::isfinite(c->c_sell)) return "non-finite price";
    if (c->c_sell > c->c_buy) return "sell price exceeds buy price (cost not convex)";
  } else if (const auto* m = std::get_if<MarketImpact>(&cost)) {
    if (!std::isfinite(m->c)) return "non-finite price";
    if (m->delta < 0.0) return "negative market-impact factor";
    if (!(m->eta > 0.0 && m->eta <= 1.0)) return "efficiency outside (0, 1]";
    if (m->c < 0.0 && m->delta > 0.0) return "negative price with market impact (cost not convex)";
    if (m->c < 0.0) return "negative price with efficiency adjustment (cost not convex)";
    if (m->delta * rates.max_rate() >= 0.5) return "market-impact factor times rate must stay below 1/2";
  } else if (const auto* w = std::get_if<PiecewiseLinear>(&cost)) {
    if (w->breakpoints.empty()) return "piecewise-linear cost without breakpoints";
    for (std::size_t k = 1; k < w->breakpoints.size(); ++k) {
      if (!(w->breakpoints[k].first > w->breakpoints[k - 1].first)) return "breakpoints not strictly increasing";
      if (w->breakpoints[k].second < w->breakpoints[k - 1].second) return "slopes decrease (cost not convex)";
    }
  }
  // Sampled subgradient monotonicity across the window.
  constexpr int kSamples = 33;
  double prev = -kInf;
  for (int i = 0; i < kSamples; ++i) {
    const double x = -rates.p_out + (rates.p_in + rates.p_out) * i / (kSamples - 1);
    const Interval g = cost_subgradient(cost, rates, x);
    const double tol = 1e-12 * (1.0 + std::abs(g.hi));
    if (g.lo < prev - tol || g.hi < g.lo - tol) return "sampled subgradients decrease (cost not convex)";
    prev = g.hi;
  }
  return {};
}

std::string check_penalty(const PenaltyModel& pen, double lo, double hi) {
  if (const auto* e = std::get_if<ExponentialPenalty>(&pen)) {
    if (e->a < 0.0 || e->kappa < 0.0) return "exponential penalty must have a >= 0 and kappa >= 0";
  } else if (const auto* v = std::get_if<InversePenalty>(&pen)) {
    if (v->b < 0.0) return "inverse penalty must have b >= 0";
    if (!(v->floor > 0.0)) return "inverse penalty floor must be positive";
    if (lo < 0.0) return "inverse penalty needs nonnegative levels";
  } else if (const auto* t = std::get_if<TabulatedPenalty>(&pen)) {
    if (t->levels.size() < 2 || t->levels.size() != t->values.size()) return "tabulated penalty needs two or more points";
    for (Eigen::Index k = 1; k < t->levels.size(); ++k) {
      if (!(t->levels(k) > t->levels(k - 1))) return "tabulated levels not strictly increasing";
    }
  }
  constexpr int kSamples = 33;
  double prev_val = kInf;
  double prev_slope = -kInf;
  for (int i = 0; i < kSamples; ++i) {
    const double s = lo + (hi - lo) * i / (kSamples - 1);
    const double v = penalty_eval(pen, s);
    const Interval g = penalty_subgradient(pen, s);
    const double tol = 1e-12 * (1.0 + std::abs(v));
    if (!std::isfinite(v)) return "penalty not finite on the bounds";
    if (v > prev_val + tol || g.hi > tol) return "penalty increases with the level (must be nonincreasing)";
    if (g.lo < prev_slope - 1e-12 * (1.0 + std::abs(prev_slope))) return "penalty slopes decrease (must be convex)";
    prev_val = v;
    prev_slope = g.hi;
  }
  if (const auto* t = std::get_if<TabulatedPenalty>(&pen)) {
    const TabSlopes ts{*t};
    for (Eigen::Index k = 1; k + 1 < ts.n(); ++k) {
      if (ts.slope(k) < ts.slope(k - 1) - 1e-12 * (1.0 + std::abs(ts.slope(k - 1))))
        return "tabulated penalty not convex";
    }
  }
  return {};
}

}  // namespace

ValidationReport validate_instance(const ProblemInstance& inst) {
  using Issue = ValidationReport::Issue;
  if (inst.horizon() < 1) return fail(Issue::BadHorizon, 0, "horizon must contain at least one period");
  if (!std::isfinite(inst.initial_level) || inst.initial_level < 0.0)
    return fail(Issue::BadBounds, 0, "initial level must be finite and nonnegative");
  if (!(inst.regularization_eps >= 0.0)) return fail(Issue::BadBounds, 0, "regularization must be nonnegative");

  for (int t = 1; t <= inst.horizon(); ++t) {
    const auto& p = inst.period(t);
    if (!(p.rates.p_in >= 0.0 && p.rates.p_out >= 0.0) || !std::isfinite(p.rates.p_in) ||
        !std::isfinite(p.rates.p_out))
      return fail(Issue::BadRates, t, "rate limits must be finite and nonnegative");
    if (!(p.lower >= 0.0 && p.lower <= p.upper) || !std::isfinite(p.upper))
      return fail(Issue::BadBounds, t, "bounds must satisfy 0 <= lower <= upper");
    if (auto why = check_cost(p.cost, p.rates); !why.empty()) return fail(Issue::NonConvexCost, t, why);
    if (!is_strictly_convex(p.cost) && inst.regularization_eps <= 0.0)
      return fail(Issue::NonConvexCost, t, "cost is not strictly convex and no regularization is set");
    if (auto why = check_penalty(p.penalty, p.lower, p.upper); !why.empty()) return fail(Issue::BadPenalty, t, why);
  }

  const auto env = reachable_envelope(inst);
  for (std::size_t t = 1; t < env.size(); ++t) {
    if (env[t].lo > env[t].hi) {
      std::ostringstream msg;
      msg << "bounds unreachable under the rate limits (reachable up to " << env[t - 1].hi + inst.period(int(t)).rates.p_in
          << ", down to " << env[t - 1].lo - inst.period(int(t)).rates.p_out << ")";
      return fail(Issue::Infeasible, static_cast<int>(t), msg.str());
    }
  }

  // Backtrack a feasible trajectory through the envelope.
  const int T = inst.horizon();
  ValidationReport ok;
  ok.feasible_levels.resize(T + 1);
  ok.feasible_levels(T) = env[std::size_t(T)].lo;
  for (int t = T; t >= 1; --t) {
    const auto& p = inst.period(t);
    const double s = ok.feasible_levels(t);
    const Interval& prev = env[std::size_t(t - 1)];
    ok.feasible_levels(t - 1) = std::clamp(s, std::max(prev.lo, s - p.rates.p_in), std::min(prev.hi, s + p.rates.p_out));
  }
  return ok;
}

}  // namespace storectl
