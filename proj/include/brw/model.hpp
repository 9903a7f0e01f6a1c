#pragma once

// Offspring point-process families for the branching random walk and the
// step law of the associated (many-to-one) random walk.

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/random/poisson_distribution.hpp>

#include "brw/errors.hpp"
#include "brw/rng.hpp"
#include "brw/stats.hpp"

namespace brw {

enum class Family { DyadicGaussian, PoissonGaussian, Custom };

inline std::string_view family_name(Family f) noexcept {
  switch (f) {
    case Family::DyadicGaussian: return "dyadic_gaussian";
    case Family::PoissonGaussian: return "poisson_gaussian";
    case Family::Custom: return "custom";
  }
  return "unknown";
}

inline std::optional<Family> parse_family(std::string_view s) noexcept {
  if (s == "dyadic_gaussian") return Family::DyadicGaussian;
  if (s == "poisson_gaussian") return Family::PoissonGaussian;
  return std::nullopt;
}

/// Increment law of the associated walk. Built-in families have a centred
/// Gaussian step; custom families only provide a sampler.
struct StepLaw {
  bool gaussian = true;
  double mean = 0.0;
  double variance = 0.0;
};

/// Estimates of E sum e^{-V}, E sum V e^{-V}, E sum V^2 e^{-V} and
/// E sum e^{-(1+alpha)V} over one generation. Standard errors are zero on
/// the quadrature path.
struct NormalizationReport {
  double m1 = 0.0;
  double m2 = 0.0;
  double sigma2_hat = 0.0;
  double a5_moment = 0.0;
  double m1_se = 0.0;
  double m2_se = 0.0;
  double sigma2_se = 0.0;
  double a5_se = 0.0;
  bool monte_carlo = false;
  std::size_t samples = 0;
};

/// Reproduction law L: an offspring count plus i.i.d. displacements, or a
/// user-supplied point process. Immutable after construction.
class OffspringLaw {
 public:
  using PointSampler = std::function<void(Rng&, std::vector<double>&)>;
  using StepSampler = std::function<double(Rng&)>;

  Family family() const noexcept { return family_; }
  /// Mean offspring count (2 for the dyadic family).
  double offspring_mean() const noexcept { return count_mean_; }
  double displacement_mean() const noexcept { return mu_; }
  double displacement_variance() const noexcept { return s2_; }
  double sigma2() const noexcept { return sigma2_; }
  double alpha() const noexcept { return alpha_; }
  const StepLaw& step_law() const noexcept { return step_; }
  bool normalized() const noexcept { return normalized_; }

  /// Draws one realisation of L and calls `f(displacement)` per child.
  template <class F>
  void for_each_child(Rng& rng, F&& f) const {
    switch (family_) {
      case Family::DyadicGaussian: {
        f(mu_ + sd_ * std_normal(rng));
        f(mu_ + sd_ * std_normal(rng));
        return;
      }
      case Family::PoissonGaussian: {
        const int k = poisson_(rng);
        for (int i = 0; i < k; ++i) f(mu_ + sd_ * std_normal(rng));
        return;
      }
      case Family::Custom: {
        thread_local std::vector<double> buf;
        buf.clear();
        point_sampler_(rng, buf);
        for (double x : buf) f(x);
        return;
      }
    }
  }

  /// One draw of the point process; displacements relative to the parent.
  std::vector<double> sample_offspring(Rng& rng) const {
    std::vector<double> out;
    for_each_child(rng, [&](double x) { out.push_back(x); });
    return out;
  }

  /// Offspring count drawn from the size-biased count law (count k with
  /// probability k P(N = k) / E N). Gaussian families only.
  int sample_size_biased_count(Rng& rng) const {
    switch (family_) {
      case Family::DyadicGaussian: return 2;
      case Family::PoissonGaussian: return 1 + poisson_(rng);
      case Family::Custom: break;
    }
    throw DomainError("size-biased count is only available for built-in families");
  }

  /// One increment of the associated random walk.
  double sample_step(Rng& rng) const {
    if (!normalized_) throw DomainError("step law undefined for an unnormalized law");
    if (step_sampler_) return step_sampler_(rng);
    return step_.mean + std::sqrt(step_.variance) * std_normal(rng);
  }

  static OffspringLaw make_dyadic_gaussian() {
    const double s2 = 2.0 * std::numbers::ln2;
    return gaussian(Family::DyadicGaussian, 2.0, s2, s2, true);
  }

  static OffspringLaw make_poisson_gaussian(double m) {
    if (!(m > 1.0) || !std::isfinite(m))
      throw DomainError("poisson_gaussian: offspring mean must exceed 1 (got " + std::to_string(m) + ")");
    const double s2 = 2.0 * std::log(m);
    return gaussian(Family::PoissonGaussian, m, s2, s2, true);
  }

  /// Gaussian-displacement family with arbitrary parameters, for diagnostics.
  /// The result is flagged unnormalized and has no step law.
  static OffspringLaw make_unnormalized_gaussian(Family family, double count_mean, double mu,
                                                 double s2) {
    if (family == Family::Custom) throw DomainError("unnormalized law must be a built-in family");
    if (family == Family::DyadicGaussian) count_mean = 2.0;
    if (!(count_mean > 0.0) || !(s2 > 0.0)) throw DomainError("invalid Gaussian family parameters");
    return gaussian(family, count_mean, mu, s2, false);
  }

  /// User-defined law. Accepted only if a Monte Carlo check of the two
  /// normalization moments passes within 3 standard errors.
  static OffspringLaw make_custom(PointSampler points, StepSampler step, double sigma2, double alpha,
                                  std::size_t gate_samples = 200000, std::uint64_t gate_seed = 1);

 private:
  static OffspringLaw gaussian(Family family, double count_mean, double mu, double s2, bool normalized) {
    OffspringLaw law;
    law.family_ = family;
    law.count_mean_ = count_mean;
    law.mu_ = mu;
    law.s2_ = s2;
    law.sd_ = std::sqrt(s2);
    law.sigma2_ = normalized ? s2 : std::numeric_limits<double>::quiet_NaN();
    law.alpha_ = 1.0;
    law.normalized_ = normalized;
    law.step_ = StepLaw{true, 0.0, s2};
    if (family == Family::PoissonGaussian)
      law.poisson_ = boost::random::poisson_distribution<int, double>(count_mean);
    return law;
  }

  Family family_ = Family::DyadicGaussian;
  double count_mean_ = 2.0;
  double mu_ = 0.0;
  double s2_ = 0.0;
  double sd_ = 0.0;
  double sigma2_ = 0.0;
  double alpha_ = 1.0;
  bool normalized_ = false;
  StepLaw step_{};
  boost::random::poisson_distribution<int, double> poisson_{};
  PointSampler point_sampler_;
  StepSampler step_sampler_;
};

/// Closed-form path: Gauss-Kronrod quadrature of the per-child moments times
/// the mean offspring count. Built-in (Gaussian) families only.
inline NormalizationReport verify_normalization(const OffspringLaw& law) {
  if (law.family() == Family::Custom)
    throw DomainError("quadrature normalization needs a Gaussian family; use the Monte Carlo overload");
  const double mu = law.displacement_mean();
  const double s = std::sqrt(law.displacement_variance());
  const double alpha = law.alpha();
  const double lo = mu - 40.0 * s;
  const double hi = mu + 40.0 * s;
  auto integrate = [&](auto g) {
    auto f = [&](double x) {
      const double z = (x - mu) / s;
      return g(x) * std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * std::numbers::pi));
    };
    return law.offspring_mean() *
           boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, lo, hi, 25, 1e-14);
  };
  NormalizationReport r;
  r.m1 = integrate([](double x) { return std::exp(-x); });
  r.m2 = integrate([](double x) { return x * std::exp(-x); });
  r.sigma2_hat = integrate([](double x) { return x * x * std::exp(-x); });
  r.a5_moment = integrate([&](double x) { return std::exp(-(1.0 + alpha) * x); });
  return r;
}

/// Monte Carlo path with standard errors.
inline NormalizationReport verify_normalization(const OffspringLaw& law, std::size_t samples, Rng& rng) {
  if (samples < 2) throw DomainError("verify_normalization: need at least 2 samples");
  stats::MomentAccumulator a1, a2, a3, a4;
  const double alpha = law.alpha();
  for (std::size_t i = 0; i < samples; ++i) {
    CompensatedSum s1, s2, s3, s4;
    law.for_each_child(rng, [&](double v) {
      const double w = std::exp(-v);
      s1.add(w);
      s2.add(v * w);
      s3.add(v * v * w);
      s4.add(std::exp(-(1.0 + alpha) * v));
    });
    a1.add(s1.value());
    a2.add(s2.value());
    a3.add(s3.value());
    a4.add(s4.value());
  }
  NormalizationReport r;
  r.monte_carlo = true;
  r.samples = samples;
  r.m1 = a1.mean();
  r.m1_se = a1.se();
  r.m2 = a2.mean();
  r.m2_se = a2.se();
  r.sigma2_hat = a3.mean();
  r.sigma2_se = a3.se();
  r.a5_moment = a4.mean();
  r.a5_se = a4.se();
  return r;
}

inline OffspringLaw OffspringLaw::make_custom(PointSampler points, StepSampler step, double sigma2,
                                              double alpha, std::size_t gate_samples,
                                              std::uint64_t gate_seed) {
  if (!points || !step) throw DomainError("custom law needs both a point-process and a step sampler");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("custom law: alpha must lie in (0, 1]");
  OffspringLaw law;
  law.family_ = Family::Custom;
  law.count_mean_ = std::numeric_limits<double>::quiet_NaN();
  law.sigma2_ = sigma2;
  law.alpha_ = alpha;
  law.normalized_ = true;
  law.step_ = StepLaw{false, 0.0, sigma2};
  law.point_sampler_ = std::move(points);
  law.step_sampler_ = std::move(step);
  Rng rng(gate_seed);
  const auto rep = verify_normalization(law, gate_samples, rng);
  const auto off = [](double est, double target, double se) {
    return se > 0.0 ? std::fabs(est - target) > 3.0 * se : std::fabs(est - target) > 1e-12;
  };
  if (off(rep.m1, 1.0, rep.m1_se) || off(rep.m2, 0.0, rep.m2_se))
    throw DomainError("custom law fails the normalization gate: m1 = " + std::to_string(rep.m1) +
                      ", m2 = " + std::to_string(rep.m2));
  return law;
}

}  // namespace brw
