#include "storectl/sim.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

namespace storectl {
namespace {

int worker_count(int requested, std::size_t jobs) {
  int n = requested > 0 ? requested : int(std::max(1u, std::thread::hardware_concurrency()));
  return int(std::min<std::size_t>(std::size_t(n), std::max<std::size_t>(jobs, 1)));
}

// Runs job(i) for i in [0, n) on a small pool; the first exception is rethrown.
template <class Job>
void parallel_for(std::size_t n, int threads, Job job) {
  const int workers = worker_count(threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// Lowers (raises) bounds that the new start level cannot reach and reports
// each relaxation.
ProblemInstance relax_unreachable(const ProblemInstance& inst, int offset, std::vector<ForcedViolation>& log,
                                  double penalty) {
  ProblemInstance out = inst;
  double lo = inst.initial_level, hi = inst.initial_level;
  for (int t = 1; t <= out.horizon(); ++t) {
    PeriodSpec& p = out.periods[std::size_t(t - 1)];
    const double reach_lo = lo - p.rates.p_out;
    const double reach_hi = hi + p.rates.p_in;
    if (p.lower > reach_hi) {
      log.push_back({offset + t, p.lower - reach_hi, penalty * (p.lower - reach_hi)});
      p.lower = reach_hi;
    }
    if (p.upper < reach_lo) {
      log.push_back({offset + t, reach_lo - p.upper, penalty * (reach_lo - p.upper)});
      p.upper = reach_lo;
    }
    lo = std::max(p.lower, reach_lo);
    hi = std::min(p.upper, reach_hi);
  }
  return out;
}

}  // namespace

double buffering_cost(const BufferingCostRule& rule, double shortfall) {
  if (const auto* l = std::get_if<LossOfLoad>(&rule)) return shortfall > 0.0 ? l->a : 0.0;
  return std::get<EnergyUnserved>(rule).unit_price * std::max(shortfall, 0.0);
}

SubstreamRng::SubstreamRng(std::uint64_t root, std::uint64_t stream) {
  std::seed_seq seq{std::uint32_t(root), std::uint32_t(root >> 32), std::uint32_t(stream),
                    std::uint32_t(stream >> 32)};
  eng_.seed(seq);
}

double SubstreamRng::uniform() { return double(eng_() >> 11) * 0x1.0p-53; }

double SubstreamRng::exponential(double mean) { return -mean * std::log1p(-uniform()); }

double SubstreamRng::magnitude(const MagnitudeLaw& law) {
  if (const auto* c = std::get_if<ConstantMagnitude>(&law)) return c->d;
  if (const auto* e = std::get_if<ExponentialMagnitude>(&law)) return exponential(e->mean);
  const auto& s = std::get<EmpiricalMagnitude>(law).samples;
  if (s.empty()) return 0.0;
  const auto k = std::min(s.size() - 1, std::size_t(uniform() * double(s.size())));
  return s[k];
}

SimulationRun simulate(const ProblemInstance& inst, const ShockProcess& shocks, const BufferingCostRule& rule,
                       std::uint64_t seed, const SimOptions& opts, const Solution* plan) {
  const int T = inst.horizon();
  SimulationRun run;
  run.seed = seed;
  run.realized_levels.resize(T + 1);
  run.realized_levels(0) = inst.initial_level;

  Eigen::VectorXd planned = plan ? plan->trajectory.levels : solve(inst, opts.solver).trajectory.levels;
  int base = 0;  // planned(k) is the plan for period base + k
  ProblemInstance current = inst;
  double s = inst.initial_level;

  for (int t = 1; t <= T; ++t) {
    const PeriodSpec& p = current.period(t);
    const double target = planned(t - base);
    run.trading_cost += cost_eval(p.cost, p.rates, target - s);
    s = target;

    SubstreamRng rng(seed, std::uint64_t(t));
    double demand = 0.0;
    if (rng.uniform() < shocks.prob_at(t)) {
      demand = rng.magnitude(shocks.magnitude);
      if (shocks.signed_shocks && rng.uniform() < 0.5) demand = -demand;
    }
    for (const auto& sc : opts.scheduled)
      if (sc.period == t) demand += sc.magnitude;

    if (demand != 0.0) {
      ShockEvent ev{t, demand, 0.0, 0.0, 0.0};
      if (demand > 0.0) {
        ev.served = std::min({demand, std::max(s - p.lower, 0.0), p.rates.p_out});
        ev.shortfall = demand - ev.served;
        ev.cost = buffering_cost(rule, ev.shortfall);
        if (opts.credit_shock_outflows) ev.cost -= cost_subgradient(p.cost, p.rates, 0.0).lo * ev.served;
        s -= ev.served;
      } else {
        const double absorbed = std::min({-demand, std::max(p.upper - s, 0.0), p.rates.p_in});
        ev.served = -absorbed;
        s += absorbed;
      }
      run.buffering_cost += ev.cost;
      run.shock_log.push_back(ev);
      if (run.first_shock_period == 0) run.first_shock_period = t;

      if (t < T) {
        for (int u = t + 1; u <= std::min(T, t + opts.persistence_window); ++u) {
          PeriodSpec& q = current.periods[std::size_t(u - 1)];
          q.upper = std::max(q.lower, q.upper - opts.persistence_reduction);
        }
        ProblemInstance tail = tail_instance(current, t, s);
        Solution next;
        try {
          next = solve(tail, opts.solver);
        } catch (const InfeasibleInstance&) {
          const std::size_t before = run.forced_violations.size();
          tail = relax_unreachable(tail, t, run.forced_violations, opts.forced_violation_penalty);
          for (std::size_t k = before; k < run.forced_violations.size(); ++k)
            run.violation_cost += run.forced_violations[k].cost;
          next = solve(tail, opts.solver);
        }
        planned = next.trajectory.levels;
        base = t;
        ++run.resolve_count;
      }
    }
    run.realized_levels(t) = s;
  }
  run.realized_cost = run.trading_cost + run.buffering_cost + run.violation_cost;
  return run;
}

std::vector<SimulationRun> simulate_many(const ProblemInstance& inst, const ShockProcess& shocks,
                                         const BufferingCostRule& rule, const std::vector<std::uint64_t>& seeds,
                                         const SimOptions& opts, int threads) {
  const Solution plan = solve(inst, opts.solver);
  std::vector<SimulationRun> runs(seeds.size());
  parallel_for(seeds.size(), threads, [&](std::size_t i) { runs[i] = simulate(inst, shocks, rule, seeds[i], opts, &plan); });
  return runs;
}

Eigen::VectorXd convex_nonincreasing_fit(const Eigen::VectorXd& levels, const Eigen::VectorXd& values) {
  const Eigen::Index n = values.size();
  if (n <= 1) return values;
  const Eigen::Index m = n - 1;
  Eigen::VectorXd h = levels.tail(m) - levels.head(m);
  Eigen::VectorXd slope = (values.tail(m) - values.head(m)).cwiseQuotient(h);

  // Pool adjacent violators: blocks of (weighted mean, weight, length).
  std::vector<double> mean, weight;
  std::vector<Eigen::Index> len;
  for (Eigen::Index k = 0; k < m; ++k) {
    mean.push_back(slope(k));
    weight.push_back(h(k));
    len.push_back(1);
    while (mean.size() > 1 && mean[mean.size() - 2] > mean.back()) {
      const std::size_t b = mean.size() - 1;
      const double w = weight[b - 1] + weight[b];
      mean[b - 1] = (mean[b - 1] * weight[b - 1] + mean[b] * weight[b]) / w;
      weight[b - 1] = w;
      len[b - 1] += len[b];
      mean.pop_back();
      weight.pop_back();
      len.pop_back();
    }
  }
  Eigen::Index k = 0;
  for (std::size_t b = 0; b < mean.size(); ++b)
    for (Eigen::Index j = 0; j < len[b]; ++j) slope(k++) = std::min(mean[b], 0.0);

  Eigen::VectorXd fit(n);
  fit(0) = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) fit(j + 1) = fit(j) + slope(j) * h(j);
  fit.array() += (values - fit).mean();
  return fit;
}

PenaltyEstimate estimate_penalty(const ShockProcess& shocks, const BufferingCostRule& rule, const RateWindow& rates,
                                 const std::vector<double>& level_grid, long n_samples, std::uint64_t seed,
                                 int threads) {
  if (n_samples < 1) throw std::invalid_argument("estimate_penalty needs at least one sample");
  if (level_grid.empty()) throw std::invalid_argument("estimate_penalty needs a level grid");
  std::vector<double> grid = level_grid;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  const std::size_t G = grid.size();

  constexpr long kChunk = 8192;
  const std::size_t chunks = std::size_t((n_samples + kChunk - 1) / kChunk);
  std::vector<std::vector<double>> sum(chunks, std::vector<double>(G, 0.0)), sq = sum;
  const double p = shocks.prob_at(1);

  parallel_for(chunks, threads, [&](std::size_t c) {
    SubstreamRng rng(seed, c);
    const long n = std::min(kChunk, n_samples - long(c) * kChunk);
    for (long i = 0; i < n; ++i) {
      if (!(rng.uniform() < p)) continue;
      double demand = rng.magnitude(shocks.magnitude);
      if (shocks.signed_shocks && rng.uniform() < 0.5) continue;
      for (std::size_t k = 0; k < G; ++k) {
        const double served = std::min({demand, std::max(grid[k], 0.0), rates.p_out});
        const double cost = buffering_cost(rule, demand - served);
        sum[c][k] += cost;
        sq[c][k] += cost * cost;
      }
    }
  });

  PenaltyEstimate out;
  const double n = double(n_samples);
  out.raw.resize(Eigen::Index(G));
  out.std_error.resize(Eigen::Index(G));
  for (std::size_t k = 0; k < G; ++k) {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t c = 0; c < chunks; ++c) {
      s1 += sum[c][k];
      s2 += sq[c][k];
    }
    const double mean = s1 / n;
    const double var = n > 1 ? std::max(s2 / n - mean * mean, 0.0) * n / (n - 1) : 0.0;
    out.raw(Eigen::Index(k)) = mean;
    out.std_error(Eigen::Index(k)) = std::sqrt(var / n);
  }
  out.model.levels = Eigen::Map<const Eigen::VectorXd>(grid.data(), Eigen::Index(G));
  out.model.values = convex_nonincreasing_fit(out.model.levels, out.raw);
  out.residual = (out.model.values - out.raw).cwiseAbs().maxCoeff();
  return out;
}

}  // namespace storectl
