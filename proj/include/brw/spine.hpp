#pragma once

// Spine samplers: the size-biased tree measure Q along its distinguished line
// of descent, and the spine walk under Q^{-y} (the walk h-transformed by
// h(u) = R(u + y), i.e. conditioned to stay in [-y, inf)).

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "brw/engine.hpp"
#include "brw/errors.hpp"
#include "brw/model.hpp"
#include "brw/numeric.hpp"
#include "brw/parallel.hpp"
#include "brw/renewal.hpp"
#include "brw/rng.hpp"
#include "brw/stats.hpp"

namespace brw::spine {

enum class Measure { Q, QMinusY };

struct SpineSample {
  std::vector<double> positions;  ///< V(w_0) .. V(w_n)
  std::vector<std::vector<double>> sibling_displacements;  ///< off-spine children per step (Q only)
  Measure measure = Measure::Q;
  std::optional<double> y;
  std::uint64_t proposals = 0;  ///< rejection-sampler proposals (Q^{-y} only)
};

/// Index chosen with probability e^{-d_i} / sum_j e^{-d_j}.
inline std::size_t select_spine_index(const std::vector<double>& displacements, Rng& rng) {
  if (displacements.empty()) throw DomainError("select_spine_index: no children");
  double lo = displacements[0];
  for (double d : displacements) lo = std::min(lo, d);
  CompensatedSum total;
  for (double d : displacements) total.add(std::exp(lo - d));
  const double u = uniform01(rng) * total.value();
  double run = 0.0;
  for (std::size_t i = 0; i < displacements.size(); ++i) {
    run += std::exp(lo - displacements[i]);
    if (u < run) return i;
  }
  return displacements.size() - 1;
}

/// One draw of the size-biased point process for a built-in family: the
/// count is size-biased and one uniformly placed child carries the
/// e^{-x}-tilted displacement N(mu - s^2, s^2).
inline std::vector<double> sample_size_biased_offspring(const OffspringLaw& law, Rng& rng) {
  if (law.family() == Family::Custom) throw DomainError("size-biased offspring needs a built-in family");
  const int k = law.sample_size_biased_count(rng);
  const double mu = law.displacement_mean();
  const double s2 = law.displacement_variance();
  const double sd = std::sqrt(s2);
  const auto tilted = static_cast<int>(uniform01(rng) * k);
  std::vector<double> out(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = (i == tilted ? mu - s2 : mu) + sd * std_normal(rng);
  return out;
}

/// Spine under Q for n generations started at 0.
inline SpineSample sample_spine_Q(const OffspringLaw& law, int n, Rng& rng) {
  if (n < 0) throw DomainError("sample_spine_Q: n must be >= 0");
  SpineSample s;
  s.measure = Measure::Q;
  s.positions.reserve(static_cast<std::size_t>(n) + 1);
  s.positions.push_back(0.0);
  for (int k = 0; k < n; ++k) {
    auto kids = sample_size_biased_offspring(law, rng);
    const std::size_t j = select_spine_index(kids, rng);
    s.positions.push_back(s.positions.back() + kids[j]);
    kids.erase(kids.begin() + static_cast<std::ptrdiff_t>(j));
    s.sibling_displacements.push_back(std::move(kids));
  }
  return s;
}

inline constexpr double kEnvelopeSafety = 1.5;

/// Spine walk under Q^{-y}: from z, the next position z' has density
/// proportional to p(z' - z) R(z' + y) 1{z' >= -y}. Exact rejection sampler
/// for Gaussian steps: with a = z + y and z' + y = a + s G, the envelope
/// C (1 + a + s|G|) >= R(a + s G) 1{a + s G >= 0} turns the proposal into a
/// mixture of N(0, 1) (weight 1 + a) and a signed Rayleigh (weight s sqrt(2/pi)).
template <class RenewalFn>
SpineSample sample_spine_walk_Qy(const OffspringLaw& law, double y, int n, const RenewalFn& R, double envelope_c,
                                 Rng& rng, std::uint64_t max_proposals_per_step = 100'000'000) {
  if (!(y >= 0.0)) throw DomainError("sample_spine_walk_Qy: y must be >= 0");
  if (n < 0) throw DomainError("sample_spine_walk_Qy: n must be >= 0");
  if (!law.step_law().gaussian) throw DomainError("sample_spine_walk_Qy: Gaussian step law required");
  if (!(envelope_c > 0.0)) throw DomainError("sample_spine_walk_Qy: envelope constant must be > 0");
  const double s = std::sqrt(law.step_law().variance);
  const double rayleigh_w = s * std::sqrt(2.0 / std::numbers::pi);
  SpineSample out;
  out.measure = Measure::QMinusY;
  out.y = y;
  out.positions.push_back(0.0);
  double z = 0.0;
  for (int k = 0; k < n; ++k) {
    const double a = z + y;
    const double p_normal = (1.0 + a) / (1.0 + a + rayleigh_w);
    for (std::uint64_t tries = 0;; ++tries) {
      if (tries >= max_proposals_per_step) throw ConsistencyError("Q^{-y} sampler: acceptance collapsed");
      ++out.proposals;
      double g;
      if (uniform01(rng) < p_normal) {
        g = std_normal(rng);
      } else {
        const double r = std::sqrt(-2.0 * std::log(uniform_open01(rng)));
        g = uniform01(rng) < 0.5 ? -r : r;
      }
      const double v = a + s * g;
      if (v < 0.0) continue;
      const double h = R(v);
      if (h > envelope_c * (1.0 + v) * (1.0 + 1e-12))
        throw ConsistencyError("Q^{-y} sampler: R exceeds the envelope C (1 + u) at u = " + std::to_string(v));
      if (uniform01(rng) * envelope_c * (1.0 + a + s * std::fabs(g)) < h) {
        z = v - y;
        break;
      }
    }
    out.positions.push_back(z);
  }
  return out;
}

inline SpineSample sample_spine_walk_Qy(const OffspringLaw& law, double y, int n,
                                        const renewal::RenewalTable& table, Rng& rng) {
  return sample_spine_walk_Qy(law, y, n, table, kEnvelopeSafety * table.max_ratio(), rng);
}

struct ManyToOnePoint {
  double t = 0.0;
  double tree_mean = 0.0;  ///< E sum_{|x| = n} e^{-V(x)} 1{V(x) <= t}
  double tree_se = 0.0;
  double walk_mean = 0.0;  ///< P(S_n <= t)
  double walk_se = 0.0;
  double exact = std::numeric_limits<double>::quiet_NaN();  ///< Phi(t / sqrt(n sigma^2)) for Gaussian steps
  double z_tree_walk = 0.0;
  double z_tree_exact = 0.0;
};

struct ManyToOneReport {
  int n = 0;
  std::size_t replicas = 0;
  std::vector<ManyToOnePoint> points;
};

/// Tree side against walk side of the many-to-one identity for g = 1{. <= t}.
/// Trees are simulated without pruning.
inline ManyToOneReport verify_many_to_one(const OffspringLaw& law, int n, const std::vector<double>& t_grid,
                                          std::size_t replicas, std::uint64_t seed, unsigned workers = 1,
                                          std::size_t particle_cap = 10'000'000) {
  if (n < 0) throw DomainError("verify_many_to_one: n must be >= 0");
  if (replicas < 2) throw DomainError("verify_many_to_one: need at least 2 replicas");
  const std::size_t T = t_grid.size();
  using Acc = std::vector<stats::MomentAccumulator>;
  engine::EngineConfig cfg;
  cfg.n_max = n;
  cfg.particle_cap = particle_cap;
  const Acc tree = reduce_replicas(
      replicas, seed, 0x3101u, workers, [&] { return Acc(T); },
      [&](Acc& acc, Rng& rng, std::size_t) {
        engine::Generation cur = engine::make_root(cfg);
        engine::Generation next;
        for (int k = 0; k < n; ++k) {
          engine::evolve_into(cur, next, law, rng, cfg);
          std::swap(cur, next);
        }
        std::vector<CompensatedSum> sums(T);
        for (double v : cur.positions) {
          const double w = std::exp(-v);
          for (std::size_t i = 0; i < T; ++i)
            if (v <= t_grid[i]) sums[i].add(w);
        }
        for (std::size_t i = 0; i < T; ++i) acc[i].add(sums[i].value());
      },
      [](Acc& into, const Acc& from) {
        for (std::size_t i = 0; i < into.size(); ++i) into[i].merge(from[i]);
      });
  const Acc walk = reduce_replicas(
      replicas, seed, 0x3102u, workers, [&] { return Acc(T); },
      [&](Acc& acc, Rng& rng, std::size_t) {
        double s = 0.0;
        for (int k = 0; k < n; ++k) s += law.sample_step(rng);
        for (std::size_t i = 0; i < T; ++i) acc[i].add(s <= t_grid[i] ? 1.0 : 0.0);
      },
      [](Acc& into, const Acc& from) {
        for (std::size_t i = 0; i < into.size(); ++i) into[i].merge(from[i]);
      });
  ManyToOneReport rep;
  rep.n = n;
  rep.replicas = replicas;
  for (std::size_t i = 0; i < T; ++i) {
    ManyToOnePoint p;
    p.t = t_grid[i];
    p.tree_mean = tree[i].mean();
    p.tree_se = tree[i].se();
    p.walk_mean = walk[i].mean();
    p.walk_se = walk[i].se();
    if (law.step_law().gaussian) {
      const double sd = std::sqrt(static_cast<double>(n) * law.step_law().variance);
      p.exact = sd > 0.0 ? normal_cdf(p.t / sd) : (p.t >= 0.0 ? 1.0 : 0.0);
      p.z_tree_exact = stats::z_score(p.tree_mean, p.exact, p.tree_se);
    }
    p.z_tree_walk = stats::z_score(p.tree_mean, p.walk_mean, stats::combined_se(p.tree_se, p.walk_se));
    rep.points.push_back(p);
  }
  return rep;
}

}  // namespace brw::spine
