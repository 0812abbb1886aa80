// Random validated instances for property tests.

#pragma once

#include "storectl/models.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace storectl::testing {

struct InstanceShape {
  int horizon = 48;
  /// Snap rates, bounds and the initial level to multiples of lattice_step
  /// (0 disables); capacity is then lattice_step * lattice_cells.
  double lattice_step = 0.0;
  int lattice_cells = 0;
  bool price_taker_only = false;
  bool exponential_only = false;  // penalties a e^{-k s} with a > 0
  bool integer_prices = false;
};

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int pick(std::mt19937_64& rng, int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); }

inline PenaltyModel random_penalty(std::mt19937_64& rng, double capacity, bool exponential_only) {
  const int kind = exponential_only ? 1 : pick(rng, 5);
  switch (kind) {
    case 0:
      return ZeroPenalty{};
    case 1:
      return ExponentialPenalty{uniform(rng, exponential_only ? 0.5 : 0.0, 20.0), uniform(rng, 0.2, 2.0)};
    case 2:
      return InversePenalty{uniform(rng, 0.0, 5.0), 1e-3};
    case 3: {
      const int n = 3 + pick(rng, 4);
      TabulatedPenalty tab;
      tab.levels = Eigen::VectorXd::LinSpaced(n, 0.0, capacity);
      tab.values.resize(n);
      double slope = -uniform(rng, 1.0, 20.0);
      tab.values(n - 1) = 0.0;
      for (int k = n - 2; k >= 0; --k) {
        tab.values(k) = tab.values(k + 1) - slope * (tab.levels(k + 1) - tab.levels(k));
        slope -= uniform(rng, 0.5, 10.0);
      }
      return tab;
    }
    default:
      return ExponentialPenalty{0.0, 1.0};
  }
}

/// Daily-cycle prices with noise, one cost family per instance.
inline ProblemInstance random_instance(std::mt19937_64& rng, const InstanceShape& shape) {
  while (true) {
    const int T = shape.horizon;
    const bool lattice = shape.lattice_step > 0.0;
    const double step = shape.lattice_step;
    auto snap = [&](double v) { return lattice ? std::round(v / step) * step : v; };

    const double capacity = lattice ? step * shape.lattice_cells : uniform(rng, 1.0, 20.0);
    const double p_in = std::max(snap(uniform(rng, 0.1, 0.6) * capacity), lattice ? step : 0.0);
    const double p_out = std::max(snap(uniform(rng, 0.1, 0.6) * capacity), lattice ? step : 0.0);
    const int cost_kind = shape.price_taker_only ? 0 : pick(rng, 3);
    const double base = uniform(rng, 20.0, 80.0);
    const double amp = uniform(rng, 0.0, 0.6) * base;
    const double noise = uniform(rng, 0.0, 0.2) * base;
    const double eta = uniform(rng, 0.6, 1.0);
    const double delta = uniform(rng, 0.0, 0.45) / std::max(p_in, p_out);
    const PenaltyModel penalty = random_penalty(rng, capacity, shape.exponential_only);
    const bool vary_penalty = pick(rng, 4) == 0;

    ProblemInstance inst;
    inst.initial_level = snap(uniform(rng, 0.0, 1.0) * capacity);
    inst.periods.resize(std::size_t(T));
    for (int t = 1; t <= T; ++t) {
      PeriodSpec& p = inst.periods[std::size_t(t - 1)];
      p.upper = capacity;
      p.lower = 0.0;
      if (pick(rng, 10) == 0) p.upper = snap(capacity * uniform(rng, 0.5, 1.0));
      if (pick(rng, 10) == 0) p.lower = snap(p.upper * uniform(rng, 0.0, 0.4));
      p.rates = {p_in, p_out};
      double c = base + amp * std::sin(2.0 * std::numbers::pi * t / 48.0) + noise * uniform(rng, -1.0, 1.0);
      c = std::max(c, 1.0);
      if (shape.integer_prices) c = std::round(c);
      switch (cost_kind) {
        case 0:
          p.cost = price_taker(c, shape.integer_prices ? std::floor(eta * c) : eta * c);
          break;
        case 1:
          p.cost = market_impact(c, delta, eta);
          break;
        default: {
          // Three pieces: discounted sell, buy, and a steeper buy beyond a threshold.
          PiecewiseLinear pl;
          pl.breakpoints = {{-p_out, eta * c}, {0.0, c}, {0.5 * p_in, c * uniform(rng, 1.05, 1.5)}};
          p.cost = pl;
        }
      }
      p.penalty = vary_penalty ? random_penalty(rng, capacity, shape.exponential_only) : penalty;
    }
    if (pick(rng, 5) == 0) {
      PeriodSpec& last = inst.periods.back();
      last.lower = last.upper = snap(uniform(rng, 0.0, 1.0) * last.upper);
    }
    if (lattice) {
      // Keep the lattice anchored at 0 and spanning the full capacity.
      inst.periods.front().lower = 0.0;
      inst.periods.front().upper = capacity;
    }
    inst.regularization_eps = default_regularization(inst.periods);
    if (validate_instance(inst).ok()) return inst;
  }
}

}  // namespace storectl::testing
