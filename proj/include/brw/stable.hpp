#pragma once

// Spectrally positive 1-stable law with characteristic exponent
//   psi(lambda) = s |lambda| (1 + i sgn(lambda) (2/pi) log|lambda|) - i mu lambda,
// E exp(i lambda X_1) = exp(-psi(lambda)), and its Levy process X_t.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "brw/errors.hpp"
#include "brw/numeric.hpp"
#include "brw/rng.hpp"
#include "brw/stats.hpp"

namespace brw::stable {

struct StableParams {
  double scale = 1.0;
  double drift = 0.0;
};

inline void validate(const StableParams& p) {
  if (!(p.scale > 0.0) || !std::isfinite(p.scale)) throw DomainError("stable scale must be > 0");
  if (!std::isfinite(p.drift)) throw DomainError("stable drift must be finite");
}

struct LimitLawSpec {
  double sigma2 = 0.0;
  double c0 = 0.0;
  double euler_gamma = std::numbers::egamma;
  StableParams params;
};

/// scale = sqrt(pi / (2 sigma2)), drift = (c0 + 1 - gamma_E) sqrt(2 / (pi sigma2)).
inline LimitLawSpec limit_params(double sigma2, double c0) {
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw DomainError("limit_params: sigma2 must be > 0");
  LimitLawSpec s;
  s.sigma2 = sigma2;
  s.c0 = c0;
  s.params.scale = std::sqrt(std::numbers::pi / (2.0 * sigma2));
  s.params.drift = (c0 + 1.0 - s.euler_gamma) * std::sqrt(2.0 / (std::numbers::pi * sigma2));
  return s;
}

inline std::complex<double> psi(double lambda, const StableParams& p) {
  if (lambda == 0.0) return {0.0, 0.0};
  const double a = std::fabs(lambda);
  const double sgn = lambda > 0.0 ? 1.0 : -1.0;
  return {p.scale * a, p.scale * a * sgn * (2.0 / std::numbers::pi) * std::log(a) - p.drift * lambda};
}

/// exp(-t psi(lambda)).
inline std::complex<double> characteristic_function(double lambda, const StableParams& p, double t = 1.0) {
  return std::exp(-t * psi(lambda, p));
}

/// Chambers-Mallows-Stuck draw with exponent psi for (scale, drift) = (1, 0).
inline double sample_std(Rng& rng) {
  constexpr double half_pi = std::numbers::pi / 2.0;
  double v;
  do {
    v = std::numbers::pi * (uniform_open01(rng) - 0.5);
  } while (!(std::fabs(v) < half_pi));
  const double w = std_exponential(rng);
  const double a = half_pi + v;
  return (2.0 / std::numbers::pi) * (a * std::tan(v) - std::log(half_pi * w * std::cos(v) / a));
}

/// X_t: t psi_{s, mu} = psi_{s t, mu t}, so X_t = s t Z + (2/pi) s t log(s t) + mu t.
inline double sample_at(double t, const StableParams& p, Rng& rng) {
  if (!(t >= 0.0)) throw DomainError("sample_at: t must be >= 0");
  if (t == 0.0) return 0.0;
  const double st = p.scale * t;
  return st * sample_std(rng) + (2.0 / std::numbers::pi) * st * std::log(st) + p.drift * t;
}

/// One draw of X at time a^{-1/2} D per entry of `d_samples`.
inline std::vector<double> mixture_sample(std::span<const double> d_samples, double a, const StableParams& p,
                                          Rng& rng) {
  if (!(a >= 1.0)) throw DomainError("mixture_sample: a must be >= 1");
  const double f = 1.0 / std::sqrt(a);
  std::vector<double> out;
  out.reserve(d_samples.size());
  for (double d : d_samples) {
    if (!(d >= 0.0)) throw DomainError("mixture_sample: D samples must be nonnegative");
    out.push_back(sample_at(f * d, p, rng));
  }
  return out;
}

/// sup over the grid of |empirical CF - exp(-t psi)|.
inline double cf_distance(std::span<const double> samples, std::span<const double> lambda_grid,
                          const StableParams& p, double t = 1.0) {
  if (samples.empty()) throw DomainError("cf_distance: no samples");
  const auto emp = stats::empirical_cf(samples, lambda_grid);
  double worst = 0.0;
  for (std::size_t i = 0; i < lambda_grid.size(); ++i)
    worst = std::max(worst, std::abs(emp[i] - characteristic_function(lambda_grid[i], p, t)));
  return worst;
}

}  // namespace brw::stable
