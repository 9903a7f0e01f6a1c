#pragma once

// Renewal function R(y) of the descending ladder process, its affine
// asymptote c* y + alpha*, and the harmonicity check
// R(y) = E[R(S_1 + y) 1{S_1 >= -y}].
//
// Two Monte Carlo estimators:
//   ladder      R(y) = E[1 + #{k >= 1 : |H_k| <= y}]
//   occupation  R(y) = E[#{0 <= j < tau+ : S_j >= -y}],  tau+ = inf{k >= 1 : S_k >= 0}
// Both are exact at y = 0 (the count is 1 on every path).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "brw/errors.hpp"
#include "brw/model.hpp"
#include "brw/parallel.hpp"
#include "brw/rng.hpp"
#include "brw/stats.hpp"
#include "brw/walk.hpp"

namespace brw::renewal {

enum class Method { LadderExpectation, Occupation, Synthetic };

inline std::string_view method_name(Method m) noexcept {
  switch (m) {
    case Method::LadderExpectation: return "ladder";
    case Method::Occupation: return "occupation";
    case Method::Synthetic: return "synthetic";
  }
  return "unknown";
}

/// Minimum top of grid for the affine fit.
inline constexpr double kMinConstantsSpan = 10.0;

struct RenewalConstants {
  double c_star = std::numeric_limits<double>::quiet_NaN();  ///< least-squares slope, upper half of grid
  double c_star_se = 0.0;
  double alpha_star = std::numeric_limits<double>::quiet_NaN();  ///< mean residual R - c* y there
  double alpha_star_se = 0.0;
  double c_star_ladder = std::numeric_limits<double>::quiet_NaN();  ///< 1 / mean |H_1|
  double c_star_ladder_se = 0.0;
  double relative_gap = std::numeric_limits<double>::quiet_NaN();
  bool disagree = false;  ///< slope and ladder values differ by more than 3 combined SE
};

class RenewalTable {
 public:
  std::vector<double> grid;
  std::vector<double> R_hat;
  std::vector<double> se;
  Method method = Method::Synthetic;
  RenewalConstants constants;
  double mean_abs_h1 = std::numeric_limits<double>::quiet_NaN();
  double mean_abs_h1_se = 0.0;
  double censored_fraction = 0.0;
  std::size_t replicas = 0;
  bool raw_violation = false;  ///< raw estimates decreased by more than 3 SE somewhere
  bool isotonic_applied = false;

  /// R at y: 0 for y < 0, piecewise linear through (0, 1) and the grid,
  /// c* y + alpha* beyond the grid (or the last segment's slope if the
  /// constants are unavailable).
  double operator()(double y) const {
    if (y < 0.0) return 0.0;
    const auto [i, t] = locate(y);
    if (i == kBeyond) return extrapolate(y);
    if (i == kBeforeFirst) return 1.0 + t * (R_hat.front() - 1.0);
    return R_hat[i] + t * (R_hat[i + 1] - R_hat[i]);
  }

  /// Interpolated standard error (linear in the neighbouring SEs).
  double se_at(double y) const {
    if (y < 0.0) return 0.0;
    const auto [i, t] = locate(y);
    if (i == kBeyond) {
      if (std::isfinite(constants.c_star))
        return std::hypot(constants.alpha_star_se, y * constants.c_star_se);
      return se.back() * y / std::max(grid.back(), 1e-300);
    }
    if (i == kBeforeFirst) return t * se.front();
    return se[i] + t * (se[i + 1] - se[i]);
  }

  double max_ratio() const {
    double r = 1.0;  // R(0) / (1 + 0)
    for (std::size_t i = 0; i < grid.size(); ++i) r = std::max(r, R_hat[i] / (1.0 + grid[i]));
    // c* y + alpha* <= max(c*, alpha*) (1 + y) on the extrapolated range
    if (std::isfinite(constants.c_star)) r = std::max({r, constants.c_star, constants.alpha_star});
    return r;
  }

  void validate() const {
    if (grid.empty()) throw DomainError("renewal table: empty grid");
    if (R_hat.size() != grid.size() || se.size() != grid.size())
      throw DomainError("renewal table: column lengths differ");
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (!(grid[i] >= 0.0)) throw DomainError("renewal table: grid must be nonnegative");
      if (i > 0 && !(grid[i] > grid[i - 1])) throw DomainError("renewal table: grid must be strictly increasing");
    }
  }

 private:
  static constexpr std::size_t kBeyond = std::numeric_limits<std::size_t>::max();
  static constexpr std::size_t kBeforeFirst = kBeyond - 1;

  std::pair<std::size_t, double> locate(double y) const {
    if (y > grid.back()) return {kBeyond, 0.0};
    if (y < grid.front()) return {kBeforeFirst, grid.front() > 0.0 ? y / grid.front() : 1.0};
    auto it = std::upper_bound(grid.begin(), grid.end(), y);
    std::size_t i = static_cast<std::size_t>(it - grid.begin());
    if (i == grid.size()) return {grid.size() >= 2 ? grid.size() - 2 : 0, grid.size() >= 2 ? 1.0 : 0.0};
    --i;
    return {i, (y - grid[i]) / (grid[i + 1] - grid[i])};
  }

  double extrapolate(double y) const {
    if (std::isfinite(constants.c_star)) return constants.c_star * y + constants.alpha_star;
    if (grid.size() < 2) return R_hat.back();
    const std::size_t n = grid.size();
    const double slope = (R_hat[n - 1] - R_hat[n - 2]) / (grid[n - 1] - grid[n - 2]);
    return R_hat.back() + slope * (y - grid.back());
  }
};

/// Table from given values (tests, loaded files). Constants are fitted if
/// the grid reaches kMinConstantsSpan.
inline RenewalTable make_table(std::vector<double> grid, std::vector<double> values,
                               std::vector<double> se = {}, Method method = Method::Synthetic);

/// Weighted pool-adjacent-violators fit (nondecreasing).
inline std::vector<double> isotonic_fit(std::span<const double> v, std::span<const double> w) {
  struct Block {
    double mean, weight;
    std::size_t len;
  };
  std::vector<Block> st;
  for (std::size_t i = 0; i < v.size(); ++i) {
    st.push_back({v[i], w.empty() ? 1.0 : w[i], 1});
    while (st.size() >= 2 && st[st.size() - 2].mean > st.back().mean) {
      Block b = st.back();
      st.pop_back();
      Block& a = st.back();
      const double tw = a.weight + b.weight;
      a.mean = (a.mean * a.weight + b.mean * b.weight) / tw;
      a.weight = tw;
      a.len += b.len;
    }
  }
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& b : st) out.insert(out.end(), b.len, b.mean);
  return out;
}

namespace detail {

inline std::size_t upper_half_start(std::size_t n) { return n / 2; }

/// Least-squares weights over the upper half: slope = sum w_i R_i,
/// intercept = sum u_i R_i.
struct FitWeights {
  std::size_t lo = 0;
  std::vector<double> w, u;
};

inline FitWeights fit_weights(std::span<const double> grid) {
  if (grid.empty() || grid.back() < kMinConstantsSpan)
    throw DomainError("renewal constants need a grid reaching y >= 10");
  FitWeights f;
  f.lo = upper_half_start(grid.size());
  const std::size_t m = grid.size() - f.lo;
  if (m < 2) throw DomainError("renewal constants need at least 2 points in the upper half of the grid");
  double ybar = 0.0;
  for (std::size_t i = f.lo; i < grid.size(); ++i) ybar += grid[i];
  ybar /= static_cast<double>(m);
  double sxx = 0.0;
  for (std::size_t i = f.lo; i < grid.size(); ++i) sxx += (grid[i] - ybar) * (grid[i] - ybar);
  if (!(sxx > 0.0)) throw DomainError("renewal constants: degenerate upper grid");
  for (std::size_t i = f.lo; i < grid.size(); ++i) {
    const double wi = (grid[i] - ybar) / sxx;
    f.w.push_back(wi);
    f.u.push_back(1.0 / static_cast<double>(m) - ybar * wi);
  }
  return f;
}

inline void compare_ladder(RenewalConstants& c) {
  if (!std::isfinite(c.c_star_ladder) || !std::isfinite(c.c_star)) return;
  c.relative_gap = std::fabs(c.c_star - c.c_star_ladder) / c.c_star;
  const double comb = stats::combined_se(c.c_star_se, c.c_star_ladder_se);
  c.disagree = std::fabs(c.c_star - c.c_star_ladder) > 3.0 * comb;
}

/// Per-replica sufficient statistics for estimate_R.
struct RenewalAcc {
  std::vector<stats::MomentAccumulator> count;
  stats::MomentAccumulator slope, intercept, abs_h1;
  std::uint64_t censored = 0;

  void merge(const RenewalAcc& o) {
    for (std::size_t i = 0; i < count.size(); ++i) count[i].merge(o.count[i]);
    slope.merge(o.slope);
    intercept.merge(o.intercept);
    abs_h1.merge(o.abs_h1);
    censored += o.censored;
  }
};

/// Occupation walk: visits to [-y_max, 0) before the first return to [0, inf),
/// binned by the smallest grid y that contains them.
inline bool occupation_sample(const OffspringLaw& law, std::span<const double> grid, std::uint64_t step_cap,
                              Rng& rng, std::vector<std::uint64_t>& hist) {
  const double y_max = grid.back();
  const bool gaussian = law.step_law().gaussian;
  const double sd = std::sqrt(law.step_law().variance);
  double s = 0.0;
  std::uint64_t t = 0;
  while (t < step_cap) {
    if (gaussian && s < -y_max) {
      std::uint64_t b = walk::detail::leap_length(-y_max - s, sd);
      if (b > 0) {
        b = std::min(b, step_cap - t);
        s += sd * std::sqrt(static_cast<double>(b)) * std_normal(rng);
        t += b;
        continue;
      }
    }
    s += law.sample_step(rng);
    ++t;
    if (s >= 0.0) return false;
    if (s >= -y_max) {
      const auto it = std::lower_bound(grid.begin(), grid.end(), -s);
      ++hist[static_cast<std::size_t>(it - grid.begin())];
    }
  }
  return true;
}

}  // namespace detail

/// Fills table.constants from the table columns alone. Standard errors treat
/// grid points as independent, which is conservative only for weakly
/// correlated columns; estimate_R supplies exact per-replica SEs instead.
inline RenewalConstants estimate_constants(const RenewalTable& table) {
  table.validate();
  const auto f = detail::fit_weights(table.grid);
  RenewalConstants c = table.constants;
  double slope = 0.0, icpt = 0.0, vs = 0.0, vi = 0.0;
  for (std::size_t k = 0; k < f.w.size(); ++k) {
    const std::size_t i = f.lo + k;
    slope += f.w[k] * table.R_hat[i];
    icpt += f.u[k] * table.R_hat[i];
    vs += f.w[k] * f.w[k] * table.se[i] * table.se[i];
    vi += f.u[k] * f.u[k] * table.se[i] * table.se[i];
  }
  c.c_star = slope;
  c.alpha_star = icpt;
  if (!(c.c_star_se > 0.0)) c.c_star_se = std::sqrt(vs);
  if (!(c.alpha_star_se > 0.0)) c.alpha_star_se = std::sqrt(vi);
  if (std::isfinite(table.mean_abs_h1) && table.mean_abs_h1 > 0.0) {
    c.c_star_ladder = 1.0 / table.mean_abs_h1;
    c.c_star_ladder_se = table.mean_abs_h1_se / (table.mean_abs_h1 * table.mean_abs_h1);
  }
  detail::compare_ladder(c);
  return c;
}

inline RenewalTable make_table(std::vector<double> grid, std::vector<double> values, std::vector<double> se,
                               Method method) {
  RenewalTable t;
  t.grid = std::move(grid);
  t.R_hat = std::move(values);
  t.se = se.empty() ? std::vector<double>(t.grid.size(), 0.0) : std::move(se);
  t.method = method;
  t.validate();
  if (t.grid.back() >= kMinConstantsSpan && t.grid.size() - detail::upper_half_start(t.grid.size()) >= 2)
    t.constants = estimate_constants(t);
  return t;
}

struct EstimateOptions {
  std::uint64_t step_cap = walk::kDefaultStepCap;
  unsigned workers = 1;
  bool isotonic = true;
};

/// Monte Carlo table on `grid` (sorted, nonnegative). Replica i uses stream
/// (seed, i); the two methods use different salts.
inline RenewalTable estimate_R(const OffspringLaw& law, std::vector<double> grid, std::size_t replicas,
                               Method method, std::uint64_t seed, const EstimateOptions& opt = {}) {
  if (grid.empty()) throw DomainError("estimate_R: empty grid");
  if (replicas == 0) throw DomainError("estimate_R: replicas must be > 0");
  if (method == Method::Synthetic) throw DomainError("estimate_R: choose ladder or occupation");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0)) throw DomainError("estimate_R: grid must be nonnegative");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw DomainError("estimate_R: grid must be strictly increasing");
  }
  const std::size_t G = grid.size();
  const bool fit = grid.back() >= kMinConstantsSpan && G - detail::upper_half_start(G) >= 2;
  const detail::FitWeights fw = fit ? detail::fit_weights(grid) : detail::FitWeights{};
  const double y_max = grid.back();

  const auto acc = reduce_replicas(
      replicas, seed, method == Method::LadderExpectation ? 0x1adu : 0x0ccu, opt.workers,
      [&] {
        detail::RenewalAcc a;
        a.count.resize(G);
        return a;
      },
      [&](detail::RenewalAcc& a, Rng& rng, std::size_t) {
        std::vector<std::uint64_t> hist(G + 1, 0);
        bool censored = false;
        if (method == Method::LadderExpectation) {
          const auto lad = walk::ladder_sample(law, y_max, opt.step_cap, rng);
          censored = lad.censored;
          if (!lad.heights.empty()) a.abs_h1.add(-lad.heights.front());
          for (double h : lad.heights) {
            if (-h > y_max) break;
            const auto it = std::lower_bound(grid.begin(), grid.end(), -h);
            ++hist[static_cast<std::size_t>(it - grid.begin())];
          }
        } else {
          censored = detail::occupation_sample(law, grid, opt.step_cap, rng, hist);
        }
        if (censored) ++a.censored;
        double run = 1.0;
        double slope = 0.0, icpt = 0.0;
        for (std::size_t i = 0; i < G; ++i) {
          run += static_cast<double>(hist[i]);
          a.count[i].add(run);
          if (fit && i >= fw.lo) {
            slope += fw.w[i - fw.lo] * run;
            icpt += fw.u[i - fw.lo] * run;
          }
        }
        a.slope.add(slope);
        a.intercept.add(icpt);
      },
      [](detail::RenewalAcc& into, const detail::RenewalAcc& from) { into.merge(from); });

  RenewalTable t;
  t.grid = grid;
  t.method = method;
  t.replicas = replicas;
  t.censored_fraction = static_cast<double>(acc.censored) / static_cast<double>(replicas);
  for (std::size_t i = 0; i < G; ++i) {
    t.R_hat.push_back(acc.count[i].mean());
    t.se.push_back(acc.count[i].se());
  }
  for (std::size_t i = 0; i + 1 < G; ++i)
    if (t.R_hat[i] - t.R_hat[i + 1] > 3.0 * stats::combined_se(t.se[i], t.se[i + 1])) t.raw_violation = true;
  if (opt.isotonic && !std::is_sorted(t.R_hat.begin(), t.R_hat.end())) {
    std::vector<double> w(G);
    for (std::size_t i = 0; i < G; ++i) w[i] = t.se[i] > 0.0 ? 1.0 / (t.se[i] * t.se[i]) : 1e300;
    t.R_hat = isotonic_fit(t.R_hat, w);
    t.isotonic_applied = true;
  }
  if (method == Method::LadderExpectation && acc.abs_h1.count() > 0) {
    t.mean_abs_h1 = acc.abs_h1.mean();
    t.mean_abs_h1_se = acc.abs_h1.se();
  }
  if (fit) {
    t.constants.c_star = acc.slope.mean();
    t.constants.c_star_se = acc.slope.se();
    t.constants.alpha_star = acc.intercept.mean();
    t.constants.alpha_star_se = acc.intercept.se();
    if (std::isfinite(t.mean_abs_h1) && t.mean_abs_h1 > 0.0) {
      t.constants.c_star_ladder = 1.0 / t.mean_abs_h1;
      t.constants.c_star_ladder_se = t.mean_abs_h1_se / (t.mean_abs_h1 * t.mean_abs_h1);
    }
    detail::compare_ladder(t.constants);
  }
  return t;
}

struct HarmonicPoint {
  double y = 0.0;
  double lhs = 0.0;  ///< E[R(S_1 + y) 1{S_1 >= -y}]
  double lhs_se = 0.0;
  double rhs = 0.0;  ///< R(y)
  double residual = 0.0;
  double combined_se = 0.0;
  double z = 0.0;
};

struct HarmonicReport {
  std::vector<HarmonicPoint> points;
  double chi2 = 0.0;
  std::size_t dof = 0;
  double chi2_p = 1.0;  ///< upper tail; grid points are treated as independent
  double max_abs_z = 0.0;
  double y_at_max = 0.0;
};

/// Residual of the harmonic identity at each grid point. The combined SE
/// adds the Monte Carlo error of the left side, the table SE at y, and the
/// mean table SE at the shifted points (a bound on the error of the
/// interpolated left side for any correlation across the grid).
template <class StepFn>
HarmonicReport check_harmonic_with(const RenewalTable& table, StepFn step, std::size_t replicas,
                                   std::uint64_t seed, unsigned workers = 1) {
  table.validate();
  if (replicas < 2) throw DomainError("check_harmonic: need at least 2 replicas");
  struct Acc {
    std::vector<stats::MomentAccumulator> val;
    std::vector<CompensatedSum> se_shift;
  };
  const std::size_t G = table.grid.size();
  const auto acc = reduce_replicas(
      replicas, seed, 0x4a2u, workers,
      [&] {
        return Acc{std::vector<stats::MomentAccumulator>(G), std::vector<CompensatedSum>(G)};
      },
      [&](Acc& a, Rng& rng, std::size_t) {
        const double s1 = step(rng);
        for (std::size_t i = 0; i < G; ++i) {
          const double y = table.grid[i];
          const bool in = s1 >= -y;
          a.val[i].add(in ? table(s1 + y) : 0.0);
          if (in) a.se_shift[i].add(table.se_at(s1 + y));
        }
      },
      [](Acc& into, const Acc& from) {
        for (std::size_t i = 0; i < into.val.size(); ++i) {
          into.val[i].merge(from.val[i]);
          into.se_shift[i].merge(from.se_shift[i]);
        }
      });
  HarmonicReport rep;
  for (std::size_t i = 0; i < G; ++i) {
    HarmonicPoint p;
    p.y = table.grid[i];
    p.lhs = acc.val[i].mean();
    p.lhs_se = acc.val[i].se();
    p.rhs = table.R_hat[i];
    p.residual = p.lhs - p.rhs;
    const double shifted = acc.se_shift[i].value() / static_cast<double>(replicas);
    p.combined_se = std::sqrt(p.lhs_se * p.lhs_se + table.se[i] * table.se[i] + shifted * shifted);
    p.z = stats::z_score(p.lhs, p.rhs, p.combined_se);
    if (std::isfinite(p.z)) {
      rep.chi2 += p.z * p.z;
      ++rep.dof;
      if (std::fabs(p.z) > rep.max_abs_z) {
        rep.max_abs_z = std::fabs(p.z);
        rep.y_at_max = p.y;
      }
    }
    rep.points.push_back(p);
  }
  rep.chi2_p = rep.dof > 0 ? boost::math::gamma_q(0.5 * static_cast<double>(rep.dof), 0.5 * rep.chi2) : 1.0;
  return rep;
}

inline HarmonicReport check_harmonic(const RenewalTable& table, const OffspringLaw& law, std::size_t replicas,
                                     std::uint64_t seed, unsigned workers = 1) {
  return check_harmonic_with(
      table, [&law](Rng& rng) { return law.sample_step(rng); }, replicas, seed, workers);
}

/// Default grid: fine near 0 where R bends, unit steps further out, up to 20.
inline std::vector<double> default_grid() {
  return {0.0, 0.125, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 7.0,
          8.0, 9.0, 10.0, 11.0, 12.0, 13.0, 14.0, 15.0, 16.0, 17.0, 18.0, 19.0, 20.0};
}

}  // namespace brw::renewal
