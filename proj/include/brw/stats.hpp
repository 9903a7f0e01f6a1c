#pragma once

// Statistical verification toolkit: streaming moments, two-sample KS,
// empirical characteristic functions, Hill tail index and the plateau
// estimator for the centering constant of the derivative martingale limit.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "brw/errors.hpp"
#include "brw/numeric.hpp"

namespace brw::stats {

/// Streaming count/mean/M2/min/max. Merging uses the Chan et al. pairwise
/// update, so results depend only on the order of add/merge calls.
class MomentAccumulator {
 public:
  void add(double x) noexcept {
    ++count_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta * (x - mean_);
    min_ = std::min(min_, x);
    max_ = std::max(max_, x);
  }

  void merge(const MomentAccumulator& o) noexcept {
    if (o.count_ == 0) return;
    if (count_ == 0) {
      *this = o;
      return;
    }
    const double n1 = static_cast<double>(count_);
    const double n2 = static_cast<double>(o.count_);
    const double n = n1 + n2;
    const double delta = o.mean_ - mean_;
    mean_ += delta * (n2 / n);
    m2_ += o.m2_ + delta * delta * (n1 * n2 / n);
    count_ += o.count_;
    min_ = std::min(min_, o.min_);
    max_ = std::max(max_, o.max_);
  }

  std::size_t count() const noexcept { return count_; }
  double mean() const noexcept { return mean_; }
  double m2() const noexcept { return m2_; }
  double min() const noexcept { return min_; }
  double max() const noexcept { return max_; }
  double variance() const noexcept {
    return count_ > 1 ? m2_ / static_cast<double>(count_ - 1) : 0.0;
  }
  double stddev() const noexcept { return std::sqrt(variance()); }
  /// Standard error of the mean.
  double se() const noexcept {
    return count_ > 1 ? std::sqrt(variance() / static_cast<double>(count_)) : 0.0;
  }

  friend bool operator==(const MomentAccumulator&, const MomentAccumulator&) = default;

 private:
  std::size_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
  double min_ = std::numeric_limits<double>::infinity();
  double max_ = -std::numeric_limits<double>::infinity();
};

inline double combined_se(double a, double b) noexcept { return std::hypot(a, b); }

/// z-score of `estimate - target` against `se`; 0/0 is reported as 0.
inline double z_score(double estimate, double target, double se) noexcept {
  const double d = estimate - target;
  if (se <= 0.0) return d == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), d);
  return d / se;
}

/// Kolmogorov survival function Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2).
inline double kolmogorov_q(double lambda) noexcept {
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = sign * 2.0 * std::exp(-2.0 * k * k * lambda * lambda);
    sum += term;
    if (std::fabs(term) <= 1e-14 * std::fabs(sum) || std::fabs(term) <= 1e-300) break;
    sign = -sign;
  }
  return std::clamp(sum, 0.0, 1.0);
}

struct KsResult {
  double stat = 0.0;
  double p = 1.0;
};

/// Classical two-sample Kolmogorov-Smirnov test with the asymptotic p-value
/// (Stephens' small-sample correction on the effective size).
inline KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DomainError("ks_two_sample: empty sample");
  std::vector<double> x(a.begin(), a.end());
  std::vector<double> y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double na = static_cast<double>(x.size());
  const double nb = static_cast<double>(y.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::fabs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  return {d, kolmogorov_q((ne + 0.12 + 0.11 / ne) * d)};
}

/// (1/N) sum_k exp(i lambda x_k) for each lambda in the grid.
inline std::vector<std::complex<double>> empirical_cf(std::span<const double> samples,
                                                      std::span<const double> lambda_grid) {
  if (samples.empty()) throw DomainError("empirical_cf: empty sample");
  std::vector<std::complex<double>> out;
  out.reserve(lambda_grid.size());
  const double n = static_cast<double>(samples.size());
  for (double lambda : lambda_grid) {
    CompensatedSum re;
    CompensatedSum im;
    for (double x : samples) {
      const double phase = lambda * x;
      re.add(std::cos(phase));
      im.add(std::sin(phase));
    }
    out.emplace_back(re.value() / n, im.value() / n);
  }
  return out;
}

/// Symmetric grid of 2*half points with magnitudes log-spaced in [lo, hi].
inline std::vector<double> symmetric_log_grid(std::size_t half = 20, double lo = 0.05,
                                              double hi = 5.0) {
  std::vector<double> g;
  g.reserve(2 * half);
  for (std::size_t k = 0; k < half; ++k) {
    const double t = half == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(half - 1);
    g.push_back(lo * std::pow(hi / lo, t));
  }
  std::vector<double> out;
  out.reserve(2 * half);
  for (auto it = g.rbegin(); it != g.rend(); ++it) out.push_back(-*it);
  out.insert(out.end(), g.begin(), g.end());
  return out;
}

/// Default Hill top fraction max(sqrt(N), 100) / N.
inline double default_top_fraction(std::size_t n) noexcept {
  const double dn = static_cast<double>(n);
  return std::min(1.0, std::max(std::sqrt(dn), 100.0) / dn);
}

/// Hill estimator of the right-tail index computed from the positive samples,
/// using the top `top_fraction` of their order statistics.
inline double hill_index(std::span<const double> samples, double top_fraction) {
  std::vector<double> pos;
  pos.reserve(samples.size());
  for (double x : samples)
    if (x > 0.0) pos.push_back(x);
  if (pos.size() < 100) throw DomainError("hill_index: fewer than 100 positive samples");
  if (!(top_fraction > 0.0 && top_fraction < 1.0))
    throw DomainError("hill_index: top_fraction must lie in (0, 1)");
  std::size_t k = static_cast<std::size_t>(std::floor(top_fraction * static_cast<double>(pos.size())));
  k = std::clamp<std::size_t>(k, 1, pos.size() - 1);
  std::nth_element(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(k), pos.end(),
                   std::greater<>());
  const double threshold = pos[k];
  std::sort(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(k), std::greater<>());
  CompensatedSum s;
  for (std::size_t i = 0; i < k; ++i) s.add(std::log(pos[i] / threshold));
  const double h = s.value() / static_cast<double>(k);
  return h > 0.0 ? 1.0 / h : std::numeric_limits<double>::infinity();
}

inline double hill_index(std::span<const double> samples) {
  std::size_t npos = 0;
  for (double x : samples) npos += x > 0.0 ? 1 : 0;
  return hill_index(samples, default_top_fraction(std::max<std::size_t>(npos, 1)));
}

/// Empirical P(X > q) and P(X < -q).
struct TailBalance {
  double right = 0.0;
  double left = 0.0;
};

inline TailBalance tail_balance(std::span<const double> samples, double q) noexcept {
  std::size_t r = 0;
  std::size_t l = 0;
  for (double x : samples) {
    r += x > q ? 1 : 0;
    l += x < -q ? 1 : 0;
  }
  const double n = static_cast<double>(std::max<std::size_t>(samples.size(), 1));
  return {static_cast<double>(r) / n, static_cast<double>(l) / n};
}

/// Empirical quantile (type 7, linear interpolation); `sorted` must be ascending.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw DomainError("quantile: empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * std::clamp(p, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double median(std::span<const double> samples) {
  std::vector<double> v(samples.begin(), samples.end());
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.5);
}

/// Average ranks (1-based), ties share the mean rank.
inline std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

/// Spearman rank correlation.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw DomainError("spearman: need paired samples");
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  MomentAccumulator ma;
  MomentAccumulator mb;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    ma.add(ra[i]);
    mb.add(rb[i]);
  }
  CompensatedSum cov;
  for (std::size_t i = 0; i < ra.size(); ++i) cov.add((ra[i] - ma.mean()) * (rb[i] - mb.mean()));
  const double denom = std::sqrt(ma.m2() * mb.m2());
  return denom > 0.0 ? cov.value() / denom : 0.0;
}

struct C0Point {
  double y = 0.0;
  double g = 0.0;   ///< mean(D 1{D <= y}) - log y
  double se = 0.0;
};

struct C0Estimate {
  double c0_hat = 0.0;
  bool plateau_found = false;
  std::size_t window_lo = 0;  ///< inclusive grid indices of the plateau
  std::size_t window_hi = 0;
  std::vector<C0Point> curve;
};

/// Minimum number of grid points for a window to count as a plateau.
inline constexpr std::size_t kMinPlateauPoints = 3;

/// Plateau estimator of lim_y E(D 1{D <= y}) - log y. The plateau is the
/// widest run of consecutive grid points whose spread of g-values stays below
/// the combined standard error of the window's extreme points.
inline C0Estimate estimate_c0(std::span<const double> d_samples, std::span<const double> y_grid) {
  if (d_samples.empty()) throw DomainError("estimate_c0: empty sample");
  for (std::size_t i = 0; i < y_grid.size(); ++i) {
    if (!(y_grid[i] > 1.0)) throw DomainError("estimate_c0: grid values must exceed 1");
    if (i > 0 && !(y_grid[i] > y_grid[i - 1])) throw DomainError("estimate_c0: grid not increasing");
  }
  C0Estimate est;
  est.curve.reserve(y_grid.size());
  for (double y : y_grid) {
    MomentAccumulator acc;
    for (double d : d_samples) acc.add(d <= y ? d : 0.0);
    est.curve.push_back({y, acc.mean() - std::log(y), acc.se()});
  }
  const auto& c = est.curve;
  std::size_t best_lo = 0;
  std::size_t best_len = 0;
  for (std::size_t lo = 0; lo < c.size(); ++lo) {
    double gmin = c[lo].g;
    double gmax = c[lo].g;
    std::size_t argmin = lo;
    std::size_t argmax = lo;
    for (std::size_t hi = lo; hi < c.size(); ++hi) {
      if (c[hi].g < gmin) {
        gmin = c[hi].g;
        argmin = hi;
      }
      if (c[hi].g > gmax) {
        gmax = c[hi].g;
        argmax = hi;
      }
      if (gmax - gmin >= combined_se(c[argmin].se, c[argmax].se)) break;
      const std::size_t len = hi - lo + 1;
      if (len > best_len) {
        best_len = len;
        best_lo = lo;
      }
    }
  }
  if (best_len >= kMinPlateauPoints) {
    est.plateau_found = true;
    est.window_lo = best_lo;
    est.window_hi = best_lo + best_len - 1;
    CompensatedSum s;
    for (std::size_t i = est.window_lo; i <= est.window_hi; ++i) s.add(c[i].g);
    est.c0_hat = s.value() / static_cast<double>(best_len);
  } else {
    est.c0_hat = std::numeric_limits<double>::quiet_NaN();
  }
  return est;
}

}  // namespace brw::stats
