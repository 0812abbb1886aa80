#include "storectl/solver.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace storectl {
namespace {

// Absolute tolerances derived once per instance; recomputing them inside each
// sweep would make a solve quadratic in the horizon.
struct Context {
  const ProblemInstance& inst;
  const SolverOptions& opts;
  double snap = 0.0;      // absolute level snap
  double fallback = 0.0;  // absolute loose contact tolerance
  double clamp = 0.0;     // absolute multiplier clamp
  double scale = 1.0;     // slope scale

  Context(const ProblemInstance& i, const SolverOptions& o) : inst(i), opts(o) {
    const double es = energy_scale(i);
    scale = slope_scale(i);
    snap = o.snap_tol * es;
    // A few ulps of tilt must not move a regularised increment past the snap.
    double eps = std::numeric_limits<double>::infinity();
    for (int t = 1; t <= i.horizon(); ++t)
      if (i.eps_at(t) > 0.0) eps = std::min(eps, i.eps_at(t));
    if (std::isfinite(eps)) snap = std::max(snap, 4.0 * scale * std::numeric_limits<double>::epsilon() / (2.0 * eps));
    fallback = std::max(o.fallback_tol * es, 100.0 * snap);
    clamp = o.clamp_tol * scale;
  }
};

// Snapping a level onto a bound may stretch the increment this far past the
// rate window; well inside the tolerance of the cost functions.
double rate_slack(const RateWindow& r) { return 5e-8 * (1.0 + r.max_rate()); }

SweepResult sweep(const Context& ctx, int start, double level, double nu) {
  const ProblemInstance& inst = ctx.inst;
  const int T = inst.horizon();
  SweepResult r;
  r.start_period = start;

  std::vector<double> lv{level};
  std::vector<double> tl;
  std::vector<double> sl;
  const std::size_t span = static_cast<std::size_t>(T - start);
  lv.reserve(std::min<std::size_t>(span + 1, 512));
  tl.reserve(std::min<std::size_t>(span, 512));
  sl.reserve(std::min<std::size_t>(span, 512));

  double s = level;
  r.status = SweepStatus::Feasible;
  r.violation_time = T;
  for (int t = start + 1; t <= T; ++t) {
    const PeriodSpec& p = inst.period(t);
    tl.push_back(nu);
    double next = s + argmin_tilted(p.cost, p.rates, nu, inst.eps_at(t));
    // Levels within the snap of a bound move onto it when the rate window
    // allows; a level past a bound that cannot move is a violation.
    const double slack = rate_slack(p.rates);
    const bool to_lower = next <= p.lower + ctx.snap && p.rates.contains(p.lower - s, slack);
    const bool to_upper = next >= p.upper - ctx.snap && p.rates.contains(p.upper - s, slack);
    if (next < p.lower - ctx.snap || (next < p.lower && !to_lower)) {
      lv.push_back(next);
      r.status = SweepStatus::ViolatedBelow;
      r.violation_time = t;
      break;
    }
    if (next > p.upper + ctx.snap || (next > p.upper && !to_upper)) {
      lv.push_back(next);
      r.status = SweepStatus::ViolatedAbove;
      r.violation_time = t;
      break;
    }
    if (to_lower) next = p.lower;
    else if (to_upper) next = p.upper;
    lv.push_back(next);
    const double g = penalty_derivative(p.penalty, next);
    sl.push_back(g);
    s = next;
    if (t == T) {
      const double e = nu + g;
      r.terminal_excess = e;
      const bool at_lower = next == p.lower;
      const bool at_upper = next == p.upper;
      if (e < 0.0 && !at_upper) r.status = SweepStatus::TerminalLow;
      else if (e > 0.0 && !at_lower) r.status = SweepStatus::TerminalHigh;
    }
    nu += g;
  }
  r.levels = Eigen::Map<const Eigen::VectorXd>(lv.data(), Eigen::Index(lv.size()));
  r.tilts = Eigen::Map<const Eigen::VectorXd>(tl.data(), Eigen::Index(tl.size()));
  r.penalty_slopes = Eigen::Map<const Eigen::VectorXd>(sl.data(), Eigen::Index(sl.size()));
  return r;
}

bool in_m(const SweepResult& r) { return classify_trial(r) == TrialClass::InM; }

NuBarResult bisect(const Context& ctx, int start, double level, const std::vector<TiltHint>& hints) {
  NuBarResult out;
  std::optional<double> lo, hi;
  SweepResult s_lo, s_hi;

  auto trial = [&](double nu) {
    ++out.trials;
    SweepResult r = sweep(ctx, start, level, nu);
    if (in_m(r)) {
      if (!lo || nu > *lo) {
        lo = nu;
        s_lo = std::move(r);
      }
    } else if (!hi || nu < *hi) {
      hi = nu;
      s_hi = std::move(r);
    }
  };

  for (const auto& h : hints) trial(h.value);
  if (!lo && !hi) {
    const PeriodSpec& p = ctx.inst.period(start + 1);
    const Interval g = cost_subgradient(p.cost, p.rates, 0.0);
    trial(0.5 * (g.lo + g.hi));
  }
  // A hint above the current lo that landed in M invalidates nothing; but a
  // hi below lo (inconsistent hints) is dropped so the bracket is ordered.
  if (lo && hi && *hi <= *lo) hi.reset();

  double step = ctx.scale;
  for (int k = 0; !lo; ++k) {
    if (k > ctx.opts.max_bracket_doublings) throw SolverError("tilt bracket: no trial below the feasible band");
    trial(*hi - step);
    step *= 2.0;
  }
  step = ctx.scale;
  for (int k = 0; !hi; ++k) {
    if (k > ctx.opts.max_bracket_doublings) throw SolverError("tilt bracket: no trial above the feasible band");
    const double nu = *lo + step;
    trial(nu);
    step *= 2.0;
  }

  while (true) {
    const double mid = *lo + 0.5 * (*hi - *lo);
    if (!(mid > *lo && mid < *hi)) break;
    trial(mid);
  }
  out.nu_lo = *lo;
  out.nu_hi = *hi;
  out.below = std::move(s_lo);
  out.above = std::move(s_hi);
  return out;
}

enum class ContactKind { Terminal, Upper, Lower, Knot, Reanchor };

struct Contact {
  const SweepResult* sweep = nullptr;
  ContactKind kind = ContactKind::Terminal;
  int time = 0;
  double level = 0.0;
  double hint = 0.0;  // tilt of the other sweep after a re-anchor
  int chain_start = 0;  // first period of a run of knot periods
  bool loose = false;   // terminal excess left to the verifier
};

// Largest t in (start, limit) with the sweep level on (or, with tol > 0, near) a bound.
std::optional<int> last_contact(const Context& ctx, const SweepResult& r, bool upper, double tol) {
  for (int t = r.last_valid_period(); t > r.start_period; --t) {
    const PeriodSpec& p = ctx.inst.period(t);
    const double s = r.level_at(t);
    const double x = (upper ? p.upper : p.lower) - r.level_at(t - 1);
    if ((upper ? s >= p.upper - tol : s <= p.lower + tol) && p.rates.contains(x, rate_slack(p.rates))) return t;
  }
  return std::nullopt;
}

bool on_knot(const PeriodSpec& p, double knot, double a, double b, double tol) {
  const Eigen::VectorXd* knots = penalty_knots(p.penalty);
  if (!knots || !(knot > p.lower && knot < p.upper)) return false;
  if (std::abs(a - knot) > tol || std::abs(b - knot) > tol) return false;
  return ((*knots).array() == knot).any();
}

// First period where the two sweeps sit on a knot of a tabulated penalty
// with different slope selections, extended over the following periods in
// which both sweeps stay on that knot. The contact is the last of them.
std::optional<Contact> knot_contact(const Context& ctx, const SweepResult& a, const SweepResult& b) {
  const int end = std::min(a.last_valid_period(), b.last_valid_period());
  for (int t = a.start_period + 1; t <= end; ++t) {
    const PeriodSpec& p = ctx.inst.period(t);
    const Eigen::VectorXd* knots = penalty_knots(p.penalty);
    if (!knots || a.slope_at(t) == b.slope_at(t)) continue;
    for (Eigen::Index k = 0; k < knots->size(); ++k) {
      const double knot = (*knots)(k);
      if (!on_knot(p, knot, a.level_at(t), b.level_at(t), ctx.snap)) continue;
      int c = t;
      while (c < end && std::abs(a.level_at(c + 1) - knot) <= ctx.snap && std::abs(b.level_at(c + 1) - knot) <= ctx.snap)
        ++c;
      return Contact{&a, ContactKind::Knot, c, knot, 0.0, t};
    }
  }
  return std::nullopt;
}

Contact choose_contact(const Context& ctx, const NuBarResult& r) {
  const SweepResult& lo = r.below;
  const SweepResult& hi = r.above;
  const int T = ctx.inst.horizon();

  if (hi.status == SweepStatus::Feasible) return {&hi, ContactKind::Terminal, T, hi.levels(hi.levels.size() - 1)};

  // Terminal level strictly inside its bounds: the bracket pins nu_T + A'_T to zero.
  const SweepResult* terminal = nullptr;
  for (const SweepResult* s : {&lo, &hi}) {
    const bool reached = s->status == SweepStatus::TerminalLow || s->status == SweepStatus::TerminalHigh;
    if (reached && std::abs(s->terminal_excess) <= ctx.clamp &&
        (!terminal || std::abs(s->terminal_excess) < std::abs(terminal->terminal_excess)))
      terminal = s;
  }
  if (terminal) return {terminal, ContactKind::Terminal, T, terminal->levels(terminal->levels.size() - 1)};

  const bool prefer_upper = lo.violation_time >= hi.violation_time;
  auto upper = last_contact(ctx, lo, true, 0.0);
  auto lower = last_contact(ctx, hi, false, 0.0);
  auto make_upper = [&](int t) { return Contact{&lo, ContactKind::Upper, t, ctx.inst.period(t).upper}; };
  auto make_lower = [&](int t) { return Contact{&hi, ContactKind::Lower, t, ctx.inst.period(t).lower}; };
  if (prefer_upper && upper) return make_upper(*upper);
  if (lower) return make_lower(*lower);
  if (upper) return make_upper(*upper);

  if (auto k = knot_contact(ctx, lo, hi)) return *k;

  // Sweeps that trade inside the regularised ramp over several periods
  // amplify tilt differences, so adjacent doubles can straddle a contact
  // without either touching it. Keep the stretch where both sweeps agree and
  // search the tilt again from its end.
  const int common = std::min(lo.violation_time, hi.violation_time);
  for (int t = lo.start_period + 1; t <= common; ++t) {
    if (std::abs(lo.level_at(t) - hi.level_at(t)) <= ctx.snap) continue;
    if (t - 1 > lo.start_period) return Contact{&lo, ContactKind::Reanchor, t - 1, lo.level_at(t - 1), hi.tilt_at(t)};
    break;
  }

  upper = last_contact(ctx, lo, true, ctx.fallback);
  lower = last_contact(ctx, hi, false, ctx.fallback);
  if (prefer_upper && upper) return make_upper(*upper);
  if (lower) return make_lower(*lower);
  if (upper) return make_upper(*upper);

  // Both reached T on either side of zero excess: the terminal level is
  // interior and the excess left over is below the level resolution.
  if (lo.status == SweepStatus::TerminalLow && hi.status == SweepStatus::TerminalHigh) {
    const SweepResult* s = std::abs(lo.terminal_excess) <= std::abs(hi.terminal_excess) ? &lo : &hi;
    Contact c{s, ContactKind::Terminal, T, s->levels(s->levels.size() - 1)};
    c.loose = true;
    return c;
  }

  std::ostringstream msg;
  msg << "no bound contact found after period " << lo.start_period << " (sweeps stop at " << lo.violation_time
      << " below / " << hi.violation_time << " above)";
  throw SolverError(msg.str());
}

struct Join {
  ContactKind kind = ContactKind::Terminal;
  int time = 0;
  int chain_start = 0;
};

// Tilts that keep the recorded increment of period t optimal.
Interval tilt_range(const Context& ctx, int t, double x) {
  const PeriodSpec& p = ctx.inst.period(t);
  const double inf = std::numeric_limits<double>::infinity();
  const double xc = std::clamp(x, -p.rates.p_out, p.rates.p_in);
  Interval g = cost_subgradient(p.cost, p.rates, xc);
  const double shift = 2.0 * ctx.inst.eps_at(t) * xc;
  g.lo += shift;
  g.hi += shift;
  if (xc >= p.rates.p_in) g.hi = inf;
  if (xc <= -p.rates.p_out) g.lo = -inf;
  return g;
}

// Chooses penalty slopes on a run of periods held at a knot so that the
// tilts inside the run keep each increment optimal and the tilt after the
// run equals nu_after. Forward pass: reachable tilt sets; backward pass:
// pick from them. When nu_after is out of reach the residual is left at the
// last period for the multiplier check.
void spread_knot_run(const Context& ctx, int first, int last, double knot, double nu_after,
                     const Eigen::VectorXd& levels, DualCertificate& cert) {
  const int n = last - first + 1;
  std::vector<Interval> reach(static_cast<std::size_t>(n)), g(static_cast<std::size_t>(n));
  reach[0] = {cert.nu(first - 1), cert.nu(first - 1)};
  for (int i = 0; i < n; ++i) {
    g[std::size_t(i)] = penalty_subgradient(ctx.inst.period(first + i).penalty, knot);
    if (i == 0) continue;
    const Interval& prev = reach[std::size_t(i - 1)];
    const Interval& gp = g[std::size_t(i - 1)];
    const int k = first + i;
    const Interval ok = tilt_range(ctx, k, levels(k) - levels(k - 1));
    Interval r{std::max(prev.lo + gp.lo, ok.lo - ctx.clamp), std::min(prev.hi + gp.hi, ok.hi + ctx.clamp)};
    if (r.lo > r.hi) r.lo = r.hi = std::clamp(0.5 * (r.lo + r.hi), prev.lo + gp.lo, prev.hi + gp.hi);
    reach[std::size_t(i)] = r;
  }
  double next = nu_after;
  for (int i = n - 1; i >= 0; --i) {
    const Interval& gi = g[std::size_t(i)];
    const Interval& r = reach[std::size_t(i)];
    const double want = next - 0.5 * (gi.lo + gi.hi);
    double nu = std::clamp(want, std::max(r.lo, next - gi.hi), std::min(r.hi, next - gi.lo));
    if (std::max(r.lo, next - gi.hi) > std::min(r.hi, next - gi.lo)) nu = std::clamp(want, r.lo, r.hi);
    const int k = first + i;
    if (i > 0) cert.nu(k - 1) = nu;
    cert.penalty_slopes(k - 1) = std::clamp(next - cert.nu(k - 1), gi.lo, gi.hi);
    cert.lambda(k - 1) = 0.0;
    next = cert.nu(k - 1);
  }
  for (int k = first; k < last; ++k) cert.nu(k) = cert.nu(k - 1) + cert.penalty_slopes(k - 1);
}

Interval chain_subgradient(const ProblemInstance& inst, int first, int last, double level) {
  Interval sum{0.0, 0.0};
  for (int t = first; t <= last; ++t) {
    const Interval g = penalty_subgradient(inst.period(t).penalty, level);
    sum.lo += g.lo;
    sum.hi += g.hi;
  }
  return sum;
}

}  // namespace

// ---------------------------------------------------------------------------

SweepResult forward_sweep(const ProblemInstance& inst, int start_period, double start_level, double nu_start,
                          const SolverOptions& opts) {
  const Context ctx(inst, opts);
  return sweep(ctx, start_period, start_level, nu_start);
}

TrialClass classify_trial(const SweepResult& s) {
  switch (s.status) {
    case SweepStatus::ViolatedBelow:
    case SweepStatus::TerminalLow:
      return TrialClass::InM;
    case SweepStatus::ViolatedAbove:
    case SweepStatus::TerminalHigh:
      return TrialClass::InMPrime;
    case SweepStatus::Feasible:
      break;
  }
  return TrialClass::Feasible;
}

NuBarResult find_nu_bar(const ProblemInstance& inst, int start_period, double start_level, const SolverOptions& opts,
                        std::vector<TiltHint> hints) {
  const Context ctx(inst, opts);
  return bisect(ctx, start_period, start_level, hints);
}

Trajectory make_trajectory(const ProblemInstance& inst, Eigen::VectorXd levels, double tol) {
  Trajectory tr;
  const int T = inst.horizon();
  tr.increments = levels.tail(T) - levels.head(T);
  tr.feasible = std::abs(levels(0) - inst.initial_level) <= tol;
  for (int t = 1; t <= T; ++t) {
    const PeriodSpec& p = inst.period(t);
    const double s = levels(t);
    tr.feasible = tr.feasible && s >= p.lower - tol && s <= p.upper + tol && p.rates.contains(tr.increments(t - 1), tol);
  }
  tr.levels = std::move(levels);
  return tr;
}

Solution solve(const ProblemInstance& inst, const SolverOptions& opts) {
  ValidationReport report = validate_instance(inst);
  if (!report.ok()) throw InfeasibleInstance(report.message, report);

  const Context ctx(inst, opts);
  const int T = inst.horizon();
  Eigen::VectorXd levels(T + 1);
  DualCertificate cert;
  cert.lambda = Eigen::VectorXd::Zero(T);
  cert.nu = Eigen::VectorXd::Zero(T);
  cert.penalty_slopes = Eigen::VectorXd::Zero(T);
  cert.horizons.assign(std::size_t(T), T);
  cert.boundary_times = {0};
  levels(0) = inst.initial_level;

  Solution sol;
  auto fail = [&](const std::string& what) {
    sol.trajectory = make_trajectory(inst, levels);
    sol.certificate = cert;
    return SolverError(what, sol);
  };

  int start = 0;
  int seg_start = 0;
  int seg_horizon = 0;
  std::optional<Join> join;
  std::vector<TiltHint> hints;
  while (start < T) {
    NuBarResult r = bisect(ctx, start, levels(start), hints);
    sol.sweeps += r.trials;
    Contact c = choose_contact(ctx, r);
    if (c.time == T) c.kind = ContactKind::Terminal;
    const SweepResult& s = *c.sweep;
    // Both bracketing sweeps decide the segment, so the look-ahead is the
    // furthest period either of them examined.
    seg_horizon = std::max({seg_horizon, r.below.violation_time, r.above.violation_time});
    for (int t = start + 1; t <= c.time; ++t) {
      levels(t) = s.level_at(t);
      cert.nu(t - 1) = s.tilt_at(t);
      cert.penalty_slopes(t - 1) = s.slope_at(t);
      cert.lambda(t - 1) = 0.0;
    }
    levels(c.time) = c.level;
    const PeriodSpec& pc = inst.period(c.time);
    if (c.kind != ContactKind::Knot) cert.penalty_slopes(c.time - 1) = penalty_derivative(pc.penalty, c.level);

    // A knot run that carries on from the previous one is the same join.
    const bool continues_run = join && join->kind == ContactKind::Knot && c.kind == ContactKind::Knot &&
                               levels(join->time) == c.level &&
                               [&] {
                                 for (int t = join->time + 1; t < c.chain_start; ++t)
                                   if (std::abs(levels(t) - c.level) > ctx.snap) return false;
                                 return true;
                               }();
    if (continues_run) {
      c.chain_start = join->chain_start;
      join.reset();
    }

    // Close the previous join now that the tilt after it is known.
    if (join) {
      int t = join->time;
      double lambda = 0.0;
      if (join->kind == ContactKind::Knot) {
        // A sweep restarted on the knot stays there with the left slope, so
        // the run continues into the new segment. Spread the tilt jump over
        // the whole run in proportion to the subgradient widths.
        const int first = join->chain_start;
        const double knot = levels(t);
        while (t + 1 < c.time && std::abs(levels(t + 1) - knot) <= ctx.snap) levels(++t) = knot;
        const double nu_after = cert.nu(t);
        spread_knot_run(ctx, first, t, knot, nu_after, levels, cert);
        lambda = cert.nu(t - 1) + cert.penalty_slopes(t - 1) - nu_after;
      } else {
        lambda = cert.nu(t - 1) + cert.penalty_slopes(t - 1) - cert.nu(t);
      }
      const PeriodSpec& p = inst.period(t);
      const bool at_lower = levels(t) == p.lower;
      const bool at_upper = levels(t) == p.upper;
      const bool wrong_sign = (at_upper && !at_lower && lambda > 0.0) || (at_lower && !at_upper && lambda < 0.0) ||
                              (!at_lower && !at_upper && lambda != 0.0);
      if (wrong_sign && join->kind == ContactKind::Reanchor && !at_lower && !at_upper) {
        // The re-anchor's tilt defect stays in the recursion residual.
        lambda = 0.0;
      } else if (wrong_sign) {
        if (std::abs(lambda) > ctx.clamp) {
          std::ostringstream msg;
          msg << "multiplier sign check failed at period " << t << " (lambda = " << lambda << ")";
          throw fail(msg.str());
        }
        lambda = 0.0;
      }
      cert.lambda(t - 1) = lambda;
    }

    hints.clear();
    if (c.kind == ContactKind::Terminal) {
      const bool at_lower = c.level == pc.lower;
      const bool at_upper = c.level == pc.upper;
      // With nu_{T+1} = 0 the slope may be any subgradient at the final level.
      const Interval g = penalty_subgradient(pc.penalty, c.level);
      const double nu_T = cert.nu(T - 1);
      double slope = cert.penalty_slopes(T - 1);
      if (at_upper && !at_lower) slope = std::min(slope, g.lo);
      else if (at_lower && !at_upper) slope = std::max(slope, g.hi);
      else if (!at_lower && !at_upper) slope = std::clamp(-nu_T, g.lo, g.hi);
      if (g.lo <= g.hi) cert.penalty_slopes(T - 1) = slope;
      double lambda = nu_T + cert.penalty_slopes(T - 1);
      if (!at_lower && !at_upper && c.loose) {
        lambda = 0.0;
      } else if ((!at_lower && !at_upper) || (at_lower && !at_upper && lambda < 0.0) ||
                 (at_upper && !at_lower && lambda > 0.0)) {
        if (std::abs(lambda) > ctx.clamp) throw fail("terminal multiplier has the wrong sign");
        lambda = 0.0;
      }
      cert.lambda(T - 1) = lambda;
      join.reset();
    } else {
      const double nu_c = cert.nu(c.time - 1);
      if (c.kind == ContactKind::Knot) {
        for (int t = c.chain_start; t <= c.time; ++t) levels(t) = c.level;
        const Interval g = chain_subgradient(inst, c.chain_start, c.time, c.level);
        const double nu_first = cert.nu(c.chain_start - 1);
        hints = {{nu_first + g.lo}, {nu_first + g.hi}};
      } else if (c.kind == ContactKind::Reanchor) {
        hints = {{nu_c + cert.penalty_slopes(c.time - 1)}, {c.hint}};
      } else {
        hints = {{nu_c + cert.penalty_slopes(c.time - 1)}};
      }
      join = Join{c.kind, c.time, c.chain_start};
    }
    start = c.time;
    if (c.kind == ContactKind::Reanchor) continue;
    for (int t = seg_start + 1; t <= c.time; ++t) cert.horizons[std::size_t(t - 1)] = seg_horizon;
    cert.boundary_times.push_back(c.time);
    ++sol.segments;
    seg_start = c.time;
    seg_horizon = 0;
  }

  sol.trajectory = make_trajectory(inst, levels, 1e-7 * energy_scale(inst));
  sol.certificate = std::move(cert);
  sol.objective = objective_value(inst, sol.trajectory.levels);
  const CapacitySensitivity sens = capacity_sensitivity(inst, sol, opts.snap_tol);
  sol.certificate.alpha = sens.alpha;
  sol.certificate.beta = sens.beta;

  if (opts.verify) {
    const KktReport kkt = verify_kkt(inst, sol, opts.verify_tol);
    if (!kkt.passed()) {
      std::ostringstream msg;
      msg << "solution failed KKT verification:";
      for (const KktCondition* k : {&kkt.primal, &kkt.slackness, &kkt.tilt, &kkt.stationarity, &kkt.sensitivity}) {
        if (!k->passed) msg << ' ' << k->name << " (worst " << k->worst << " at period " << k->failures.front() << ")";
      }
      throw SolverError(msg.str(), sol);
    }
  }
  return sol;
}

// ---------------------------------------------------------------------------

namespace {

void record(KktCondition& c, int t, double violation) {
  c.worst = std::max(c.worst, violation);
  if (violation > 1.0) {
    c.passed = false;
    c.failures.push_back(t);
  }
}

}  // namespace

KktReport verify_kkt(const ProblemInstance& inst, const Solution& sol, double tol) {
  KktReport rep;
  rep.primal.name = "primal feasibility";
  rep.slackness.name = "complementary slackness";
  rep.tilt.name = "tilt recursion";
  rep.stationarity.name = "stationarity";
  rep.sensitivity.name = "sensitivity split";

  const int T = inst.horizon();
  const Eigen::VectorXd& s = sol.trajectory.levels;
  const DualCertificate& c = sol.certificate;
  const double etol = tol * energy_scale(inst);
  const double stol = tol * slope_scale(inst);

  const bool sized = s.size() == T + 1 && c.lambda.size() == T && c.nu.size() == T;
  if (!sized) {
    record(rep.primal, 0, std::numeric_limits<double>::infinity());
    return rep;
  }
  record(rep.primal, 0, std::abs(s(0) - inst.initial_level) / etol);

  for (int t = 1; t <= T; ++t) {
    const PeriodSpec& p = inst.period(t);
    const double st = s(t);
    const double x = st - s(t - 1);
    const double lambda = c.lambda(t - 1);
    const double nu = c.nu(t - 1);

    const double bound_gap = std::max({p.lower - st, st - p.upper, 0.0});
    const double rate_gap = std::max({-p.rates.p_out - x, x - p.rates.p_in, 0.0});
    record(rep.primal, t, std::max(bound_gap, rate_gap) / etol);

    const bool at_lower = std::abs(st - p.lower) <= etol;
    const bool at_upper = std::abs(st - p.upper) <= etol;
    double cs = 0.0;
    if (!at_lower && !at_upper) cs = std::abs(lambda);
    else if (at_lower && !at_upper) cs = std::max(-lambda, 0.0);
    else if (at_upper && !at_lower) cs = std::max(lambda, 0.0);
    record(rep.slackness, t, cs / stol);

    const double nu_next = t < T ? c.nu(t) : 0.0;
    const Interval ga = penalty_subgradient(p.penalty, std::max(st, 0.0));
    const double needed = nu_next - nu + lambda;
    record(rep.tilt, t, std::max({ga.lo - needed, needed - ga.hi, 0.0}) / stol);

    const double target = nu - 2.0 * inst.eps_at(t) * x;
    // Subgradient hull over x +- etol, so recorded increments that sit a
    // rounding error off a kink still see the kink.
    const Interval g1 = cost_subgradient(p.cost, p.rates, std::clamp(x - etol, -p.rates.p_out, p.rates.p_in));
    const Interval g2 = cost_subgradient(p.cost, p.rates, std::clamp(x + etol, -p.rates.p_out, p.rates.p_in));
    const Interval gc{std::min(g1.lo, g2.lo), std::max(g1.hi, g2.hi)};
    const bool top = x >= p.rates.p_in - etol;
    const bool bottom = x <= -p.rates.p_out + etol;
    double st_gap = 0.0;
    if (top && bottom) st_gap = 0.0;
    else if (top) st_gap = std::max(gc.lo - target, 0.0);
    else if (bottom) st_gap = std::max(target - gc.hi, 0.0);
    else st_gap = std::max({gc.lo - target, target - gc.hi, 0.0});
    record(rep.stationarity, t, st_gap / stol);

    if (c.alpha.size() == T && c.beta.size() == T) {
      const double a = c.alpha(t - 1);
      const double b = c.beta(t - 1);
      record(rep.sensitivity, t, std::max({-a, b, std::abs(lambda - a - b), 0.0}) / stol);
    }
  }
  return rep;
}

CapacitySensitivity capacity_sensitivity(const ProblemInstance& inst, const Solution& sol, double snap_tol) {
  const int T = inst.horizon();
  const double tol = snap_tol * energy_scale(inst);
  CapacitySensitivity out{Eigen::VectorXd::Zero(T), Eigen::VectorXd::Zero(T)};
  for (int t = 1; t <= T; ++t) {
    const PeriodSpec& p = inst.period(t);
    const double s = sol.trajectory.levels(t);
    const double lambda = sol.certificate.lambda(t - 1);
    const bool at_lower = std::abs(s - p.lower) <= tol;
    const bool at_upper = std::abs(s - p.upper) <= tol;
    if (at_lower && at_upper) {
      (lambda >= 0.0 ? out.alpha : out.beta)(t - 1) = lambda;
    } else if (at_lower) {
      out.alpha(t - 1) = std::max(lambda, 0.0);
    } else if (at_upper) {
      out.beta(t - 1) = std::min(lambda, 0.0);
    }
  }
  return out;
}

ProblemInstance tail_instance(const ProblemInstance& inst, int first, double level) {
  ProblemInstance out;
  out.initial_level = level;
  out.regularization_eps = inst.regularization_eps;
  out.periods.assign(inst.periods.begin() + first, inst.periods.end());
  return out;
}

}  // namespace storectl
