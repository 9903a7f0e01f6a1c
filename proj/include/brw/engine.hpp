#pragma once

// Generation-by-generation simulation of the branching random walk.
//
// A Generation stores particle positions as a flat array plus, per registered
// checkpoint k, the running minimum of each particle's ancestral path since
// generation k. Killing barriers remove a particle at its first entry below
// the barrier level and log it in the crossing ledger. Marked barriers (the
// gamma_n level attached to generations n and ceil(a n)) never remove anything;
// they only tag each particle as above-barrier, good-crossed or bad-crossed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include "brw/errors.hpp"
#include "brw/model.hpp"
#include "brw/numeric.hpp"
#include "brw/rng.hpp"

namespace brw::engine {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// A particle removed at its first entry below a killing barrier.
struct CrossingRecord {
  int generation = 0;
  double value = 0.0;   ///< V(x) at first entry, strictly below `barrier`
  double weight = 0.0;  ///< exp(-value)
  double barrier = 0.0;
  int origin_checkpoint = 0;
};

/// Removes particles entering (-inf, level) at any generation >= checkpoint.
struct KillingBarrier {
  double level = 0.0;
  int checkpoint = 0;
};

/// gamma_n = (1/2) log n + beta_n.
struct BarrierSchedule {
  int n = 1;
  double beta_n = 0.0;
  double gamma_n = 0.0;
};

inline BarrierSchedule make_schedule(int n, double beta_n) {
  if (n < 1) throw DomainError("barrier schedule: n must be >= 1");
  if (!(beta_n > 0.0)) throw DomainError("barrier schedule: beta_n must be > 0");
  return {n, beta_n, 0.5 * std::log(static_cast<double>(n)) + beta_n};
}

/// Default rule beta_n = log n (requires n >= 2 so that beta_n > 0).
inline BarrierSchedule default_schedule(int n) {
  if (n < 2) throw DomainError("default beta_n = log n needs n >= 2");
  return make_schedule(n, std::log(static_cast<double>(n)));
}

inline int ceil_an(double a, int n) {
  if (!(a >= 1.0)) throw DomainError("a must be >= 1");
  return static_cast<int>(std::ceil(a * static_cast<double>(n) - 1e-12));
}

/// A gamma_n barrier watched from generation ceil(a n) on.
struct MarkedBarrier {
  BarrierSchedule schedule;
  double a = 1.0;
  /// Generations at which run_tree evaluates barrier_quantities.
  std::vector<int> eval_generations;

  int entry_generation() const { return ceil_an(a, schedule.n); }
};

enum class MarkClass : std::uint8_t { Above = 0, Good = 1, Bad = 2 };

/// Per-particle classification state for one marked barrier, plus sums over
/// crossing events accumulated since ceil(a n).
struct MarkState {
  std::vector<MarkClass> cls;
  std::vector<double> anchor;  ///< V(z) of the first-crossing ancestor z
  CompensatedSum clean_crossing_mass;  ///< sum e^{-V(z)} over z with clean history (N_good)
  CompensatedSum hat_good_raw;         ///< sum e^{-V(z)} (V(z) - log(n)/2) over good z
  CompensatedSum good_mass;
  CompensatedSum bad_mass;
  std::size_t good_events = 0;
  std::size_t bad_events = 0;
  std::size_t entry_below = 0;  ///< particles already below gamma_n at ceil(a n)
};

struct Generation {
  int index = 0;
  std::vector<double> positions;
  std::vector<int> checkpoints;                       ///< registered generation indices
  std::vector<std::vector<double>> checkpoint_mins;   ///< empty until the checkpoint is reached
  std::vector<MarkState> marks;                       ///< aligned with EngineConfig::marked
  std::vector<CrossingRecord> crossing_ledger;
  double lost_mass_upper = 0.0;  ///< sum e^{-V} of particles discarded above the prune cap
  double lost_derivative = 0.0;  ///< sum V e^{-V} of the same particles

  std::size_t size() const noexcept { return positions.size(); }

  /// Path minima since checkpoint generation k; throws if k is not active.
  const std::vector<double>& mins_since(int k) const {
    for (std::size_t c = 0; c < checkpoints.size(); ++c)
      if (checkpoints[c] == k && k <= index) return checkpoint_mins[c];
    throw DomainError("checkpoint " + std::to_string(k) + " is not registered or not yet reached");
  }

  bool has_checkpoint(int k) const noexcept {
    return std::find(checkpoints.begin(), checkpoints.end(), k) != checkpoints.end() && k <= index;
  }
};

struct EngineConfig {
  int n_max = 0;
  int horizon = 0;  ///< D at generation n_max + horizon serves as the D_infinity proxy
  std::vector<int> checkpoints;
  std::vector<KillingBarrier> killing;
  std::vector<MarkedBarrier> marked;
  double prune_cap = kInf;
  std::size_t particle_cap = 10'000'000;
  double root_position = 0.0;

  int last_generation() const { return n_max + horizon; }

  /// Checkpoints including those implied by the marked barriers.
  std::vector<int> all_checkpoints() const {
    std::vector<int> ck = checkpoints;
    for (const auto& m : marked) {
      ck.push_back(m.schedule.n);
      ck.push_back(m.entry_generation());
    }
    std::sort(ck.begin(), ck.end());
    ck.erase(std::unique(ck.begin(), ck.end()), ck.end());
    return ck;
  }

  void validate() const {
    if (n_max < 0 || horizon < 0) throw DomainError("n_max and horizon must be >= 0");
    for (int k : checkpoints)
      if (k < 0) throw DomainError("checkpoint generations must be >= 0");
    for (const auto& b : killing)
      if (b.checkpoint < 0) throw DomainError("killing barrier checkpoint must be >= 0");
    if (particle_cap == 0) throw DomainError("particle cap must be positive");
  }
};

namespace detail {
inline void activate_checkpoints(Generation& g) {
  for (std::size_t c = 0; c < g.checkpoints.size(); ++c)
    if (g.checkpoints[c] == g.index) g.checkpoint_mins[c] = g.positions;
}
}  // namespace detail

/// Generation 0: one particle at `cfg.root_position`.
inline Generation make_root(const EngineConfig& cfg) {
  Generation g;
  g.index = 0;
  g.positions = {cfg.root_position};
  g.checkpoints = cfg.all_checkpoints();
  g.checkpoint_mins.assign(g.checkpoints.size(), {});
  detail::activate_checkpoints(g);
  g.marks.resize(cfg.marked.size());
  for (std::size_t k = 0; k < cfg.marked.size(); ++k) {
    if (cfg.marked[k].entry_generation() == 0) throw DomainError("marked barrier needs ceil(a n) >= 1");
    g.marks[k].cls.assign(1, MarkClass::Above);
    g.marks[k].anchor.assign(1, std::numeric_limits<double>::quiet_NaN());
  }
  return g;
}

/// Replaces every particle of `src` by its offspring, writing into `dst`.
/// The crossing ledger and loss counters are moved from `src`.
inline void evolve_into(Generation& src, Generation& dst, const OffspringLaw& law, Rng& rng,
                        const EngineConfig& cfg) {
  if (src.size() > cfg.particle_cap) throw BudgetExceeded(src.index, src.size(), cfg.particle_cap);
  const int gen = src.index + 1;
  dst.index = gen;
  dst.positions.clear();
  dst.checkpoints = src.checkpoints;
  dst.checkpoint_mins.resize(src.checkpoints.size());
  dst.crossing_ledger = std::move(src.crossing_ledger);
  src.crossing_ledger.clear();
  dst.lost_mass_upper = src.lost_mass_upper;
  dst.lost_derivative = src.lost_derivative;

  // Checkpoints already active for the parents carry running minima.
  std::vector<std::size_t> carried;
  for (std::size_t c = 0; c < src.checkpoints.size(); ++c) {
    dst.checkpoint_mins[c].clear();
    if (src.checkpoints[c] <= src.index) carried.push_back(c);
  }

  const std::size_t num_marks = cfg.marked.size();
  dst.marks.resize(num_marks);
  struct MarkCtx {
    int entry;
    double gamma;
    double beta;
    double half_log_n;
    std::size_t ck_n;
  };
  std::vector<MarkCtx> mctx;
  for (std::size_t k = 0; k < num_marks; ++k) {
    const auto& mb = cfg.marked[k];
    MarkState& ms = dst.marks[k];
    MarkState& ps = src.marks[k];
    ms.cls.clear();
    ms.anchor.clear();
    ms.clean_crossing_mass = ps.clean_crossing_mass;
    ms.hat_good_raw = ps.hat_good_raw;
    ms.good_mass = ps.good_mass;
    ms.bad_mass = ps.bad_mass;
    ms.good_events = ps.good_events;
    ms.bad_events = ps.bad_events;
    ms.entry_below = ps.entry_below;
    const auto it = std::find(src.checkpoints.begin(), src.checkpoints.end(), mb.schedule.n);
    mctx.push_back({mb.entry_generation(), mb.schedule.gamma_n, mb.schedule.beta_n,
                    0.5 * std::log(static_cast<double>(mb.schedule.n)),
                    static_cast<std::size_t>(it - src.checkpoints.begin())});
  }

  const bool simple = carried.empty() && num_marks == 0 && cfg.killing.empty();
  dst.positions.reserve(static_cast<std::size_t>(static_cast<double>(src.size()) * 2.2) + 4);
  CompensatedSum lost_w(dst.lost_mass_upper);
  CompensatedSum lost_d(dst.lost_derivative);

  for (std::size_t i = 0; i < src.size(); ++i) {
    const double parent = src.positions[i];
    law.for_each_child(rng, [&](double disp) {
      const double v = parent + disp;
      if (v > cfg.prune_cap) {
        const double w = std::exp(-v);
        lost_w.add(w);
        lost_d.add(v * w);
        return;
      }
      if (simple) {
        dst.positions.push_back(v);
        return;
      }
      bool killed = false;
      for (const auto& kb : cfg.killing) {
        if (gen >= kb.checkpoint && v < kb.level) {
          dst.crossing_ledger.push_back({gen, v, std::exp(-v), kb.level, kb.checkpoint});
          killed = true;
        }
      }
      if (killed) return;
      dst.positions.push_back(v);
      for (std::size_t c : carried)
        dst.checkpoint_mins[c].push_back(std::min(src.checkpoint_mins[c][i], v));
      for (std::size_t k = 0; k < num_marks; ++k) {
        const MarkCtx& mc = mctx[k];
        MarkState& ms = dst.marks[k];
        const MarkState& ps = src.marks[k];
        MarkClass cls = MarkClass::Above;
        double anchor = std::numeric_limits<double>::quiet_NaN();
        if (gen == mc.entry) {
          if (v < mc.gamma) {
            cls = MarkClass::Bad;
            anchor = v;
            ++ms.entry_below;
          }
        } else if (gen > mc.entry) {
          if (ps.cls[i] != MarkClass::Above) {
            cls = ps.cls[i];
            anchor = ps.anchor[i];
          } else if (v < mc.gamma) {
            const double w = std::exp(-v);
            const bool clean = src.checkpoint_mins[mc.ck_n][i] >= mc.gamma;
            if (clean) ms.clean_crossing_mass.add(w);
            if (clean && v >= mc.gamma - 0.5 * mc.beta) {
              cls = MarkClass::Good;
              ms.hat_good_raw.add(w * (v - mc.half_log_n));
              ms.good_mass.add(w);
              ++ms.good_events;
            } else {
              cls = MarkClass::Bad;
              ms.bad_mass.add(w);
              ++ms.bad_events;
            }
            anchor = v;
          }
        }
        ms.cls.push_back(cls);
        ms.anchor.push_back(anchor);
      }
    });
  }
  dst.lost_mass_upper = lost_w.value();
  dst.lost_derivative = lost_d.value();
  detail::activate_checkpoints(dst);
  if (dst.size() > cfg.particle_cap) throw BudgetExceeded(gen, dst.size(), cfg.particle_cap);
}

inline Generation evolve(Generation gen, const OffspringLaw& law, Rng& rng, const EngineConfig& cfg) {
  Generation out;
  evolve_into(gen, out, law, rng, cfg);
  return out;
}

inline double compute_W(const Generation& g) {
  CompensatedSum s;
  for (double v : g.positions) s.add(std::exp(-v));
  return s.value();
}

inline double compute_D(const Generation& g) {
  CompensatedSum s;
  for (double v : g.positions) s.add(v * std::exp(-v));
  return s.value();
}

/// D_n^{-y} = sum R(V + y) e^{-V} 1{min_{j<=n} V(x_j) >= -y}; `renewal` is any
/// callable y -> R(y). Requires the generation-0 checkpoint.
template <class RenewalFn>
double truncated_martingale(const Generation& g, double y, const RenewalFn& renewal) {
  if (!(y >= 0.0)) throw DomainError("truncated_martingale: y must be >= 0");
  const auto& mins = g.mins_since(0);
  CompensatedSum s;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double v = g.positions[i];
    if (mins[i] >= -y) s.add(renewal(v + y) * std::exp(-v));
  }
  return s.value();
}

struct CrossingCounts {
  double N = 0.0;
  double N_hat = 0.0;
};

/// Weighted first-crossing counts for the barrier -y over generations
/// [n_lo, n_hi]; N_hat weighs crossers landing in [-y - beta_n/2, -y) by
/// (V + beta_n + y).
inline CrossingCounts crossing_counts(const std::vector<CrossingRecord>& ledger, int n_lo, int n_hi,
                                      double y, double beta_n) {
  CompensatedSum n;
  CompensatedSum nh;
  for (const auto& r : ledger) {
    if (r.barrier != -y || r.generation < n_lo || r.generation > n_hi) continue;
    n.add(r.weight);
    if (r.value >= -y - 0.5 * beta_n) nh.add((r.value + beta_n + y) * r.weight);
  }
  return {n.value(), nh.value()};
}

struct BarrierQuantities {
  int generation = 0;
  double W = 0.0;
  double D = 0.0;
  double W_tilde = 0.0;    ///< sum e^{-V} over above-barrier particles
  double D_barrier = 0.0;  ///< sum l(V - gamma_n) e^{-V}, l(u) = c* u + alpha*
  double F_good = 0.0;     ///< c* sum (V(u) - V(z)) e^{-V(u)} over descendants of good z
  double F_bad = 0.0;
  double anchor_term = 0.0;  ///< c* sum V(z) e^{-V(u)} over crossed particles
  double N_good = 0.0;       ///< crossing mass with clean history since n
  double N_hat_good = 0.0;   ///< c* sum e^{-V(z)} (V(z) - log(n)/2) over good z
  std::size_t count_above = 0;
  std::size_t count_good = 0;
  std::size_t count_bad = 0;
  std::size_t count_total = 0;
  std::size_t entry_below = 0;
  std::size_t violations = 0;  ///< particles whose class disagrees with their path minima
  /// c* D - (D_barrier - (alpha* - c* gamma_n) W_tilde + F_good + F_bad + anchor_term);
  /// zero up to rounding.
  double reconstruction_residual = 0.0;
};

/// Barrier-restricted sums and the good/bad split for marked barrier `mark`.
inline BarrierQuantities barrier_quantities(const Generation& g, const EngineConfig& cfg,
                                            std::size_t mark, double c_star, double alpha_star) {
  if (mark >= cfg.marked.size() || mark >= g.marks.size()) throw DomainError("unknown marked barrier");
  const MarkedBarrier& mb = cfg.marked[mark];
  const int entry = mb.entry_generation();
  if (g.index < entry) throw DomainError("barrier quantities need generation >= ceil(a n)");
  const double gamma = mb.schedule.gamma_n;
  const MarkState& ms = g.marks[mark];
  const auto& mins_entry = g.mins_since(entry);

  CompensatedSum w, d, wt, db, fg, fb, anc;
  BarrierQuantities q;
  q.generation = g.index;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double v = g.positions[i];
    const double e = std::exp(-v);
    w.add(e);
    d.add(v * e);
    const MarkClass cls = ms.cls[i];
    const bool above_by_path = mins_entry[i] >= gamma;
    switch (cls) {
      case MarkClass::Above:
        ++q.count_above;
        wt.add(e);
        db.add((c_star * (v - gamma) + alpha_star) * e);
        if (!above_by_path) ++q.violations;
        break;
      case MarkClass::Good:
      case MarkClass::Bad: {
        const double z = ms.anchor[i];
        if (above_by_path || !(z < gamma)) ++q.violations;
        (cls == MarkClass::Good ? fg : fb).add(c_star * (v - z) * e);
        anc.add(c_star * z * e);
        ++(cls == MarkClass::Good ? q.count_good : q.count_bad);
        break;
      }
      default:
        ++q.violations;
    }
  }
  q.count_total = g.size();
  if (q.count_above + q.count_good + q.count_bad != q.count_total) ++q.violations;
  q.W = w.value();
  q.D = d.value();
  q.W_tilde = wt.value();
  q.D_barrier = db.value();
  q.F_good = fg.value();
  q.F_bad = fb.value();
  q.anchor_term = anc.value();
  q.N_good = ms.clean_crossing_mass.value();
  q.N_hat_good = c_star * ms.hat_good_raw.value();
  q.entry_below = ms.entry_below;
  q.reconstruction_residual = c_star * q.D - (q.D_barrier - (alpha_star - c_star * gamma) * q.W_tilde +
                                              q.F_good + q.F_bad + q.anchor_term);
  return q;
}

struct BarrierPoint {
  std::size_t mark = 0;
  BarrierQuantities q;
};

struct MartingaleTrack {
  std::vector<double> W;  ///< W_n for n = 0 .. n_max + horizon
  std::vector<double> D;
  std::vector<double> lost_mass;        ///< cumulative pruned e^{-V} mass per generation
  std::vector<double> lost_derivative;  ///< cumulative pruned V e^{-V}
  std::vector<std::size_t> population;
  int n_max = 0;
  int horizon = 0;
  double D_infty_proxy = 0.0;
  std::vector<BarrierPoint> barrier_series;

  int last_generation() const noexcept { return static_cast<int>(W.size()) - 1; }
};

struct NoObserver {
  void operator()(const Generation&) const noexcept {}
};

/// Simulates generations 0 .. n_max + horizon. `observer(gen)` sees every
/// generation; barrier quantities use (c_star, alpha_star) for l(u).
template <class Observer = NoObserver>
MartingaleTrack run_tree(const OffspringLaw& law, const EngineConfig& cfg, Rng& rng,
                         Observer&& observer = {}, double c_star = 1.0, double alpha_star = 0.0) {
  cfg.validate();
  MartingaleTrack t;
  t.n_max = cfg.n_max;
  t.horizon = cfg.horizon;
  const int last = cfg.last_generation();
  t.W.reserve(static_cast<std::size_t>(last) + 1);
  t.D.reserve(static_cast<std::size_t>(last) + 1);
  Generation cur = make_root(cfg);
  Generation next;
  for (int k = 0;; ++k) {
    t.W.push_back(compute_W(cur));
    t.D.push_back(compute_D(cur));
    t.lost_mass.push_back(cur.lost_mass_upper);
    t.lost_derivative.push_back(cur.lost_derivative);
    t.population.push_back(cur.size());
    for (std::size_t m = 0; m < cfg.marked.size(); ++m) {
      const auto& ev = cfg.marked[m].eval_generations;
      if (std::find(ev.begin(), ev.end(), k) != ev.end())
        t.barrier_series.push_back({m, barrier_quantities(cur, cfg, m, c_star, alpha_star)});
    }
    observer(static_cast<const Generation&>(cur));
    if (k == last) break;
    evolve_into(cur, next, law, rng, cfg);
    std::swap(cur, next);
  }
  t.D_infty_proxy = t.D.back();
  return t;
}

enum class LogCorrection { HalfLogN, DeltaVariant };

/// sqrt(n) (D_proxy - D_{ceil(an)} + (log n / 2) W_{ceil(an)}), or the variant
/// with (log n) / sqrt(2 pi sigma^2 ceil(an)) * delta_hat * D_proxy as correction.
inline double fluctuation_statistic(const MartingaleTrack& t, int n, double a, LogCorrection mode,
                                    double sigma2 = 0.0, double delta_hat = 1.0) {
  if (n < 1) throw DomainError("fluctuation_statistic: n must be >= 1");
  const int m = ceil_an(a, n);
  if (m > t.last_generation()) throw DomainError("fluctuation_statistic: track too short for ceil(a n)");
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  const double log_n = std::log(static_cast<double>(n));
  const double proxy = t.D_infty_proxy;
  const auto idx = static_cast<std::size_t>(m);
  if (mode == LogCorrection::HalfLogN) return sqrt_n * (proxy - t.D[idx] + 0.5 * log_n * t.W[idx]);
  if (!(sigma2 > 0.0)) throw DomainError("delta variant needs sigma2 > 0");
  const double corr = log_n / std::sqrt(2.0 * std::numbers::pi * sigma2 * static_cast<double>(m));
  return sqrt_n * (proxy - t.D[idx] + corr * delta_hat * proxy);
}

}  // namespace brw::engine
