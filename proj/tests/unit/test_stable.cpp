#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "brw/parallel.hpp"
#include "brw/stable.hpp"
#include "brw/stats.hpp"

namespace {

using namespace brw;
using namespace brw::stable;

std::vector<double> draws(std::size_t n, double t, const StableParams& p, std::uint64_t salt) {
  return map_replicas(n, 31, salt, 1, [&](Rng& rng, std::size_t) { return sample_at(t, p, rng); });
}

TEST(Stable, ExponentSpecialValues) {
  const StableParams p{1.7, -0.4};
  EXPECT_EQ(psi(0.0, p), std::complex<double>(0.0, 0.0));
  const auto one = psi(1.0, p);
  EXPECT_DOUBLE_EQ(one.real(), 1.7);
  EXPECT_DOUBLE_EQ(one.imag(), 0.4);  // sigma - i mu
  const auto neg = psi(-2.0, p);
  EXPECT_EQ(neg, std::conj(psi(2.0, p)));  // Hermitian symmetry
}

TEST(Stable, LimitParameters) {
  EXPECT_NEAR(limit_params(std::numbers::pi / 2.0, 0.0).params.scale, 1.0, 1e-15);
  const auto s = limit_params(2.0 * std::numbers::ln2, 0.0);
  EXPECT_NEAR(s.params.scale, std::sqrt(std::numbers::pi / (4.0 * std::numbers::ln2)), 1e-15);
  EXPECT_NEAR(s.params.scale, 1.0645, 1e-4);
  EXPECT_NEAR(s.params.drift, (1.0 - std::numbers::egamma) * std::sqrt(2.0 / (std::numbers::pi * 2.0 * std::numbers::ln2)),
              1e-15);
  EXPECT_THROW(limit_params(0.0, 0.0), DomainError);
  EXPECT_THROW(limit_params(-1.0, 0.0), DomainError);
}

TEST(Stable, ZeroTimeIsZero) {
  Rng rng(1);
  EXPECT_EQ(sample_at(0.0, {1.0, 5.0}, rng), 0.0);
  EXPECT_THROW(sample_at(-1.0, {1.0, 0.0}, rng), DomainError);
}

TEST(Stable, UnitLawCharacteristicFunction) {
  const std::size_t n = 1'000'000;
  const StableParams p{1.0, 0.0};
  const auto x = draws(n, 1.0, p, 1);
  EXPECT_LE(cf_distance(x, stats::symmetric_log_grid(), p), 4.0 / std::sqrt(static_cast<double>(n)));
}

TEST(Stable, ScaledTimeCharacteristicFunction) {
  const std::size_t n = 400000;
  const StableParams p{0.7, 0.3};
  const auto x = draws(n, 2.5, p, 2);
  EXPECT_LE(cf_distance(x, stats::symmetric_log_grid(), p, 2.5), 4.0 / std::sqrt(static_cast<double>(n)));
}

TEST(Stable, Additivity) {
  const auto p = limit_params(2.0 * std::numbers::ln2, 0.0).params;
  const auto x2 = draws(100000, 2.0, p, 3);
  const auto a = draws(100000, 1.0, p, 4);
  const auto b = draws(100000, 1.0, p, 5);
  std::vector<double> s(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) s[i] = a[i] + b[i];
  EXPECT_GT(stats::ks_two_sample(x2, s).p, 0.01);
}

TEST(Stable, SpectralPositivity) {
  const auto x = draws(400000, 1.0, {1.0, 0.0}, 6);
  const auto tb = stats::tail_balance(x, 10.0);
  EXPECT_GT(tb.right, 20.0 * tb.left);
  EXPECT_NEAR(stats::hill_index(x, 0.01), 1.0, 0.15);
}

TEST(Stable, MixtureSamples) {
  const StableParams p{1.0, 0.2};
  Rng rng(7);
  const std::vector<double> zeros(1000, 0.0);
  for (double v : mixture_sample(zeros, 1.0, p, rng)) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(mixture_sample(std::vector<double>{-0.1}, 1.0, p, rng), DomainError);
  EXPECT_THROW(mixture_sample(zeros, 0.5, p, rng), DomainError);

  // constant D: the mixture is X at time a^{-1/2} d
  const std::vector<double> d(50000, 1.8);
  Rng r1(8);
  const auto mix = mixture_sample(d, 4.0, p, r1);
  const auto ref = draws(50000, 0.9, p, 9);
  EXPECT_GT(stats::ks_two_sample(mix, ref).p, 0.01);

  // a = 4 halves the time: same uniforms give X_{d/2} exactly
  Rng r2(10), r3(10);
  const std::vector<double> one{3.0};
  EXPECT_DOUBLE_EQ(mixture_sample(one, 4.0, p, r2)[0], sample_at(1.5, p, r3));
}

TEST(Stable, ValidateParameters) {
  EXPECT_THROW(validate({0.0, 0.0}), DomainError);
  EXPECT_THROW(validate({1.0, std::numeric_limits<double>::infinity()}), DomainError);
  EXPECT_NO_THROW(validate({1.0, -3.0}));
  EXPECT_THROW(cf_distance(std::vector<double>{}, stats::symmetric_log_grid(), {1.0, 0.0}), DomainError);
}

}  // namespace
