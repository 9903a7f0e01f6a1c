#pragma once

// The associated centred random walk S_n: paths, ladder structure, hitting
// times and survival probabilities.
//
// Long excursions away from the level of interest are crossed in leaps when
// the step law is Gaussian: a block of B steps is replaced by one N(0, B s^2)
// draw whenever the walk sits more than kLeapSigmas * s * sqrt(B) away from
// that level. By Levy's reflection inequality the block then touches the
// level with probability below 2 Phi(-kLeapSigmas) ~ 1e-15, which is the only
// approximation involved.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "brw/errors.hpp"
#include "brw/model.hpp"
#include "brw/parallel.hpp"
#include "brw/rng.hpp"
#include "brw/stats.hpp"

namespace brw::walk {

inline constexpr double kLeapSigmas = 8.0;
/// Blocks shorter than this are simulated step by step.
inline constexpr std::uint64_t kMinLeap = 64;
inline constexpr std::uint64_t kDefaultStepCap = 10'000'000'000ULL;

struct WalkPath {
  std::vector<double> values;  ///< S_0 .. S_n
  double running_min = 0.0;
};

inline WalkPath simulate_path(const OffspringLaw& law, int n, double start, Rng& rng) {
  if (n < 0) throw DomainError("simulate_path: n must be >= 0");
  WalkPath p;
  p.values.reserve(static_cast<std::size_t>(n) + 1);
  p.values.push_back(start);
  double s = start;
  double lo = start;
  for (int k = 0; k < n; ++k) {
    s += law.sample_step(rng);
    lo = std::min(lo, s);
    p.values.push_back(s);
  }
  p.running_min = lo;
  return p;
}

/// Strict descending ladder points after epoch 0 (H_0 = S_0 is implicit).
struct LadderSequence {
  std::vector<std::int64_t> epochs;
  std::vector<double> heights;  ///< relative to S_0, strictly decreasing, all < 0
  bool censored = false;
  std::uint64_t steps = 0;  ///< raw walk steps consumed (leaps count in full)
  /// Number of ladder steps needed to drop below -y_stop: tau = 1 + #{k >= 1 : H_k >= -y_stop}.
  /// Meaningful only when not censored.
  int tau = 0;
};

/// Ladder points of an explicit path (no stopping rule).
inline LadderSequence ladder_from_path(std::span<const double> values) {
  LadderSequence l;
  if (values.empty()) return l;
  double m = values[0];
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] < m) {
      m = values[i];
      l.epochs.push_back(static_cast<std::int64_t>(i));
      l.heights.push_back(values[i] - values[0]);
    }
  }
  l.steps = values.empty() ? 0 : values.size() - 1;
  l.tau = static_cast<int>(l.heights.size());
  return l;
}

namespace detail {
/// Largest leap allowed at distance `gap` from the level: s sqrt(B) * k <= gap.
inline std::uint64_t leap_length(double gap, double sd) {
  const double r = gap / (kLeapSigmas * sd);
  const double b = r * r;
  if (!(b >= static_cast<double>(kMinLeap))) return 0;
  return b > 1e18 ? static_cast<std::uint64_t>(1e18) : static_cast<std::uint64_t>(b);
}
}  // namespace detail

/// Runs the walk from 0 until it drops strictly below -y_stop or `step_cap`
/// raw steps elapse; records every strict descending ladder point on the way.
inline LadderSequence ladder_sample(const OffspringLaw& law, double y_stop, std::uint64_t step_cap, Rng& rng) {
  if (step_cap == 0) throw DomainError("ladder_sample: step_cap must be > 0");
  if (!(y_stop >= 0.0)) throw DomainError("ladder_sample: y_stop must be >= 0");
  const bool gaussian = law.step_law().gaussian;
  const double sd = std::sqrt(law.step_law().variance);
  LadderSequence l;
  double s = 0.0;
  double m = 0.0;
  std::uint64_t t = 0;
  while (t < step_cap) {
    if (gaussian) {
      std::uint64_t b = detail::leap_length(s - m, sd);
      if (b > 0) {
        b = std::min(b, step_cap - t);
        s += sd * std::sqrt(static_cast<double>(b)) * std_normal(rng);
        t += b;
        continue;
      }
    }
    s += law.sample_step(rng);
    ++t;
    if (s < m) {
      m = s;
      l.epochs.push_back(static_cast<std::int64_t>(t));
      l.heights.push_back(s);
      if (s < -y_stop) {
        l.steps = t;
        l.tau = static_cast<int>(l.heights.size());
        return l;
      }
    }
  }
  l.censored = true;
  l.steps = t;
  l.tau = static_cast<int>(l.heights.size()) + 1;
  return l;
}

enum class Direction { Below, AtOrAbove };

/// First k >= 1 with S_k < barrier (Below) or S_k >= barrier (AtOrAbove),
/// scanning at most `cap` indices; nullopt if none.
inline std::optional<int> hitting_time(std::span<const double> path, double barrier, Direction dir,
                                       std::size_t cap) {
  if (cap == 0) throw DomainError("hitting_time: cap must be > 0");
  const std::size_t last = std::min(path.size(), cap + 1);
  for (std::size_t k = 1; k < last; ++k) {
    const bool hit = dir == Direction::Below ? path[k] < barrier : path[k] >= barrier;
    if (hit) return static_cast<int>(k);
  }
  return std::nullopt;
}

/// Same, for a freshly simulated walk started at `start`.
inline std::optional<std::uint64_t> hitting_time(const OffspringLaw& law, double start, double barrier,
                                                 Direction dir, std::uint64_t cap, Rng& rng) {
  if (cap == 0) throw DomainError("hitting_time: cap must be > 0");
  double s = start;
  for (std::uint64_t k = 1; k <= cap; ++k) {
    s += law.sample_step(rng);
    if (dir == Direction::Below ? s < barrier : s >= barrier) return k;
  }
  return std::nullopt;
}

struct SurvivalEstimate {
  int n = 0;
  double p_hat = 0.0;  ///< P(min_{j<=n} S_j >= 0)
  double se = 0.0;
  double theta_star_hat = 0.0;
  double delta_n_hat = 0.0;  ///< sqrt(n) p_hat / theta_star_hat

  double scaled() const { return std::sqrt(static_cast<double>(n)) * p_hat; }
};

/// P(S_1..S_n >= 0) for every n in `n_grid`, one pass per walk (each walk is
/// stopped at its first negative value). theta* is estimated as sqrt(N) p_hat
/// at the largest N, so delta_hat equals 1 there.
inline std::vector<SurvivalEstimate> survival_prob(const OffspringLaw& law, std::vector<int> n_grid,
                                                   std::size_t replicas, std::uint64_t seed,
                                                   unsigned workers = 1) {
  if (n_grid.empty()) throw DomainError("survival_prob: empty n grid");
  for (int n : n_grid)
    if (n < 1) throw DomainError("survival_prob: n must be >= 1");
  if (replicas == 0) throw DomainError("survival_prob: replicas must be > 0");
  std::sort(n_grid.begin(), n_grid.end());
  n_grid.erase(std::unique(n_grid.begin(), n_grid.end()), n_grid.end());
  const int n_max = n_grid.back();
  // survivors[k] = number of walks with min_{j <= n_grid[k]} S_j >= 0
  using Counts = std::vector<std::uint64_t>;
  const Counts survivors = reduce_replicas(
      replicas, seed, 0x5u, workers, [&] { return Counts(n_grid.size(), 0); },
      [&](Counts& acc, Rng& rng, std::size_t) {
        double s = 0.0;
        int alive_until = n_max;
        for (int k = 1; k <= n_max; ++k) {
          s += law.sample_step(rng);
          if (s < 0.0) {
            alive_until = k - 1;
            break;
          }
        }
        for (std::size_t g = 0; g < n_grid.size(); ++g)
          if (alive_until >= n_grid[g]) ++acc[g];
      },
      [](Counts& into, const Counts& from) {
        for (std::size_t g = 0; g < into.size(); ++g) into[g] += from[g];
      });
  std::vector<SurvivalEstimate> out;
  const double r = static_cast<double>(replicas);
  for (std::size_t g = 0; g < n_grid.size(); ++g) {
    SurvivalEstimate e;
    e.n = n_grid[g];
    e.p_hat = static_cast<double>(survivors[g]) / r;
    e.se = std::sqrt(e.p_hat * (1.0 - e.p_hat) / r);
    out.push_back(e);
  }
  const double theta = out.back().scaled();
  for (auto& e : out) {
    e.theta_star_hat = theta;
    e.delta_n_hat = theta > 0.0 ? e.scaled() / theta : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

/// Survival for symmetric continuous steps: C(2n, n) / 4^n (Sparre Andersen).
inline double sparre_andersen_survival(int n) {
  if (n < 0) throw DomainError("sparre_andersen_survival: n must be >= 0");
  double p = 1.0;
  for (int k = 1; k <= n; ++k) p *= (2.0 * k - 1.0) / (2.0 * k);
  return p;
}

}  // namespace brw::walk
