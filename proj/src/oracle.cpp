#include "storectl/oracle.hpp"

#include <cmath>
#include <limits>

namespace storectl {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTieTol = 1e-12;
constexpr double kLatticeTol = 1e-9;

bool tie(double v, double m) { return v <= m + kTieTol * (1.0 + std::abs(m)); }

int lattice_floor(double v, double lo, double step) { return int(std::floor((v - lo) / step + kLatticeTol)); }
int lattice_ceil(double v, double lo, double step) { return int(std::ceil((v - lo) / step - kLatticeTol)); }

double cost_slope_bound(const PeriodSpec& p) {
  const Interval lo = cost_subgradient(p.cost, p.rates, -p.rates.p_out);
  const Interval hi = cost_subgradient(p.cost, p.rates, p.rates.p_in);
  return std::max({std::abs(lo.lo), std::abs(lo.hi), std::abs(hi.lo), std::abs(hi.hi)});
}

}  // namespace

int ValueTable::index_of(double s) const {
  const int i = int(std::lround((s - lo) / spacing));
  return std::clamp(i, 0, points() - 1);
}

ValueTable dp_solve(const ProblemInstance& inst, int grid_points) {
  if (grid_points < 2) throw std::invalid_argument("dp_solve needs at least two grid points");
  const int T = inst.horizon();
  double lo = inst.initial_level;
  double hi = inst.initial_level;
  for (const auto& p : inst.periods) {
    lo = std::min(lo, p.lower);
    hi = std::max(hi, p.upper);
  }
  ValueTable tab;
  tab.lo = lo;
  tab.spacing = hi > lo ? (hi - lo) / (grid_points - 1) : 1.0;
  const int N = hi > lo ? grid_points : 1;
  tab.grid = Eigen::VectorXd::LinSpaced(N, lo, hi);
  tab.values = Eigen::MatrixXd::Constant(N, T + 1, kInf);
  tab.policy = Eigen::MatrixXi::Zero(N, T);
  tab.valid.assign(std::size_t(T + 1), {0, N - 1});

  const double step = tab.spacing;
  for (int t = 1; t <= T; ++t) {
    const PeriodSpec& p = inst.period(t);
    tab.valid[std::size_t(t)] = {std::max(0, lattice_ceil(p.lower, lo, step)),
                                 std::min(N - 1, lattice_floor(p.upper, lo, step))};
  }
  tab.values.col(T).segment(tab.valid[std::size_t(T)].first,
                            tab.valid[std::size_t(T)].second - tab.valid[std::size_t(T)].first + 1)
      .setZero();

  Eigen::VectorXd w(N);
  std::vector<double> cost;
  for (int t = T; t >= 1; --t) {
    const PeriodSpec& p = inst.period(t);
    const auto [vlo, vhi] = tab.valid[std::size_t(t)];
    const int jmin = -std::min(N - 1, lattice_floor(p.rates.p_out, 0.0, step));
    const int jmax = std::min(N - 1, lattice_floor(p.rates.p_in, 0.0, step));
    cost.resize(std::size_t(jmax - jmin + 1));
    for (int j = jmin; j <= jmax; ++j) cost[std::size_t(j - jmin)] = cost_eval(p.cost, p.rates, j * step);
    w.setConstant(kInf);
    for (int k = vlo; k <= vhi; ++k) w(k) = penalty_eval(p.penalty, tab.grid(k)) + tab.values(k, t);

    int first = N, last = -1;
    for (int i = 0; i < N; ++i) {
      const int a = std::max(jmin, vlo - i);
      const int b = std::min(jmax, vhi - i);
      if (a > b) continue;
      double m = kInf;
      for (int j = a; j <= b; ++j) m = std::min(m, cost[std::size_t(j - jmin)] + w(i + j));
      if (!std::isfinite(m)) continue;
      // Smallest |j| among (near-)minimisers, sells before buys at equal |j|.
      int best = 0;
      bool found = false;
      for (int r = 0; !found; ++r) {
        for (int j : {-r, r}) {
          if (j < a || j > b || found) continue;
          if (tie(cost[std::size_t(j - jmin)] + w(i + j), m)) {
            best = j;
            found = true;
          }
        }
      }
      tab.values(i, t - 1) = cost[std::size_t(best - jmin)] + w(i + best);
      tab.policy(i, t - 1) = best;
      first = std::min(first, i);
      last = std::max(last, i);
    }
    if (t - 1 > 0) {
      // Intersect with the bounds of period t-1.
      auto& v = tab.valid[std::size_t(t - 1)];
      v = {std::max(v.first, first), std::min(v.second, last)};
      for (int i = 0; i < N; ++i)
        if (i < v.first || i > v.second) tab.values(i, t - 1) = kInf;
    } else {
      tab.valid[0] = {first, last};
    }
  }
  return tab;
}

int default_grid_points(const ProblemInstance& inst) {
  double lo = inst.initial_level;
  double hi = inst.initial_level;
  for (const auto& p : inst.periods) {
    lo = std::min(lo, p.lower);
    hi = std::max(hi, p.upper);
  }
  const double n = std::ceil(201.0 * std::max(hi - lo, 1e-12));
  return int(std::clamp(n, 2.0, 4001.0));
}

Trajectory dp_policy_rollout(const ProblemInstance& inst, const ValueTable& table, double s0) {
  const int T = table.horizon();
  Eigen::VectorXd levels(T + 1);
  int i = table.index_of(s0);
  levels(0) = table.grid(i);
  for (int t = 1; t <= T; ++t) {
    i += table.policy(i, t - 1);
    levels(t) = table.grid(i);
  }
  return make_trajectory(inst, std::move(levels), 1e-9 * energy_scale(inst));
}

double dp_objective(const ProblemInstance& inst, const ValueTable& table) {
  return table.values(table.index_of(inst.initial_level), 0);
}

TargetInterval target_interval(const ProblemInstance& inst, int t, const ValueTable& table) {
  const PeriodSpec& p = inst.period(t);
  const auto* pt = std::get_if<PriceTaker>(&p.cost);
  if (!pt) throw UnsupportedModel("target interval requires a price-taker cost");
  const auto [vlo, vhi] = table.valid[std::size_t(t)];
  if (vlo > vhi) throw std::invalid_argument("period has no reachable lattice level");

  std::vector<double> w(std::size_t(vhi - vlo + 1));
  for (int k = vlo; k <= vhi; ++k) w[std::size_t(k - vlo)] = penalty_eval(p.penalty, table.grid(k)) + table.values(k, t);

  auto f = [&](double c, int k) { return c * table.grid(k) + w[std::size_t(k - vlo)]; };
  double mb = kInf, ms = kInf;
  for (int k = vlo; k <= vhi; ++k) {
    mb = std::min(mb, f(pt->c_buy, k));
    ms = std::min(ms, f(pt->c_sell, k));
  }
  TargetInterval out;
  out.i_buy = vlo;
  while (!tie(f(pt->c_buy, out.i_buy), mb)) ++out.i_buy;
  out.i_sell = vhi;
  while (!tie(f(pt->c_sell, out.i_sell), ms)) --out.i_sell;
  out.s_buy = table.grid(out.i_buy);
  out.s_sell = table.grid(out.i_sell);
  return out;
}

Trajectory target_interval_rollout(const ProblemInstance& inst, const ValueTable& table, double s0) {
  const int T = table.horizon();
  Eigen::VectorXd levels(T + 1);
  int i = table.index_of(s0);
  levels(0) = table.grid(i);
  const double step = table.spacing;
  for (int t = 1; t <= T; ++t) {
    const PeriodSpec& p = inst.period(t);
    const TargetInterval ti = target_interval(inst, t, table);
    const int up = lattice_floor(p.rates.p_in, 0.0, step);
    const int down = lattice_floor(p.rates.p_out, 0.0, step);
    if (i < ti.i_buy) i = std::min(ti.i_buy, i + up);
    else if (i > ti.i_sell) i = std::max(ti.i_sell, i - down);
    levels(t) = table.grid(i);
  }
  return make_trajectory(inst, std::move(levels), 1e-9 * energy_scale(inst));
}

double lipschitz_bound(const ProblemInstance& inst) {
  double L = 0.0;
  for (const auto& p : inst.periods) L += cost_slope_bound(p) + penalty_slope_bound(p.penalty, p.lower, p.upper);
  return L;
}

double convexity_violation(const ValueTable& table, int t) {
  const auto [a, b] = table.valid[std::size_t(t)];
  double worst = 0.0;
  for (int i = a + 1; i < b; ++i) {
    const double v0 = table.values(i - 1, t), v1 = table.values(i, t), v2 = table.values(i + 1, t);
    const double d2 = v0 - 2.0 * v1 + v2;
    worst = std::max(worst, -d2 / (1.0 + std::abs(v1)));
  }
  return worst;
}

MonotonicityViolation monotonicity_violation(const ValueTable& table, int t) {
  const auto [a, b] = table.valid[std::size_t(t - 1)];
  MonotonicityViolation out;
  for (int i = a + 1; i <= b; ++i) {
    const double x0 = table.increment(t, i - 1), x1 = table.increment(t, i);
    out.increment = std::max(out.increment, x1 - x0);
    out.landing = std::max(out.landing, (table.grid(i - 1) + x0) - (table.grid(i) + x1));
  }
  return out;
}

}  // namespace storectl
