#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "brw/model.hpp"
#include "brw/parallel.hpp"
#include "brw/stats.hpp"

namespace {

using namespace brw;
const double kLn2x2 = 2.0 * std::numbers::ln2;

TEST(Model, DyadicParametersSolveBothNormalizationEquations) {
  const auto law = OffspringLaw::make_dyadic_gaussian();
  EXPECT_NEAR(law.displacement_mean(), 1.386294, 1e-6);
  EXPECT_NEAR(law.displacement_variance(), 1.386294, 1e-6);
  EXPECT_NEAR(law.sigma2(), 1.386294, 1e-6);
  // 2 e^{-mu + s^2/2} = 1 and E sum V e^{-V} = 2 (mu - s^2) e^{-mu + s^2 / 2} = 0
  const double mu = law.displacement_mean(), s2 = law.displacement_variance();
  EXPECT_NEAR(2.0 * std::exp(-mu + 0.5 * s2), 1.0, 1e-14);
  EXPECT_NEAR(mu - s2, 0.0, 1e-14);
  EXPECT_EQ(law.step_law().mean, 0.0);
  EXPECT_TRUE(law.normalized());
}

TEST(Model, QuadratureNormalizationOnDyadicLaw) {
  const auto r = verify_normalization(OffspringLaw::make_dyadic_gaussian());
  EXPECT_NEAR(r.m1, 1.0, 1e-10);
  EXPECT_NEAR(r.m2, 0.0, 1e-10);
  EXPECT_NEAR(r.sigma2_hat, kLn2x2, 1e-10);
  EXPECT_TRUE(std::isfinite(r.a5_moment));
  EXPECT_FALSE(r.monte_carlo);
}

TEST(Model, UncenteredDyadicHasFirstMomentFour) {
  const auto law = OffspringLaw::make_unnormalized_gaussian(Family::DyadicGaussian, 2.0, 0.0, kLn2x2);
  EXPECT_FALSE(law.normalized());
  EXPECT_NEAR(verify_normalization(law).m1, 4.0, 1e-10);
  Rng rng(1);
  EXPECT_THROW(law.sample_step(rng), DomainError);
}

TEST(Model, PoissonFamilyParameters) {
  EXPECT_NEAR(OffspringLaw::make_poisson_gaussian(2.0).sigma2(), kLn2x2, 1e-12);
  EXPECT_DOUBLE_EQ(OffspringLaw::make_poisson_gaussian(std::numbers::e).sigma2(), 2.0);
  EXPECT_THROW(OffspringLaw::make_poisson_gaussian(1.0), DomainError);
  EXPECT_THROW(OffspringLaw::make_poisson_gaussian(0.5), DomainError);
  const auto r = verify_normalization(OffspringLaw::make_poisson_gaussian(3.0));
  EXPECT_NEAR(r.m1, 1.0, 1e-10);
  EXPECT_NEAR(r.m2, 0.0, 1e-10);
}

TEST(Model, DyadicAlwaysTwoChildren) {
  const auto law = OffspringLaw::make_dyadic_gaussian();
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(law.sample_offspring(rng).size(), 2u);
}

TEST(Model, PoissonCountMeanAndEmptyFrequency) {
  const auto law = OffspringLaw::make_poisson_gaussian(3.0);
  Rng rng(5);
  stats::MomentAccumulator count, empty;
  for (int i = 0; i < 100000; ++i) {
    const auto k = law.sample_offspring(rng).size();
    count.add(static_cast<double>(k));
    empty.add(k == 0 ? 1.0 : 0.0);
  }
  EXPECT_LE(std::fabs(stats::z_score(count.mean(), 3.0, count.se())), 3.0);
  EXPECT_LE(std::fabs(stats::z_score(empty.mean(), std::exp(-3.0), empty.se())), 3.0);
}

TEST(Model, MonteCarloNormalizationPoisson) {
  Rng rng(7);
  const auto r = verify_normalization(OffspringLaw::make_poisson_gaussian(2.0), 1'000'000, rng);
  EXPECT_TRUE(r.monte_carlo);
  EXPECT_LE(std::fabs(stats::z_score(r.m1, 1.0, r.m1_se)), 3.0);
  EXPECT_LE(std::fabs(stats::z_score(r.m2, 0.0, r.m2_se)), 3.0);
}

TEST(Model, StepLawMomentsAndSymmetry) {
  const auto law = OffspringLaw::make_dyadic_gaussian();
  Rng rng(11);
  stats::MomentAccumulator x, sq, neg;
  for (int i = 0; i < 1'000'000; ++i) {
    const double s = law.sample_step(rng);
    x.add(s);
    sq.add(s * s);
    neg.add(s <= 0.0 ? 1.0 : 0.0);
  }
  EXPECT_LE(std::fabs(stats::z_score(x.mean(), 0.0, x.se())), 3.0);
  EXPECT_LE(std::fabs(stats::z_score(sq.mean(), kLn2x2, sq.se())), 3.0);
  EXPECT_LE(std::fabs(stats::z_score(neg.mean(), 0.5, neg.se())), 3.0);
}

TEST(Model, CustomLawGate) {
  const double s2 = kLn2x2;
  // a normalized custom law: same as dyadic, built from samplers
  auto points = [s2](Rng& rng, std::vector<double>& out) {
    out.push_back(s2 + std::sqrt(s2) * std_normal(rng));
    out.push_back(s2 + std::sqrt(s2) * std_normal(rng));
  };
  auto step = [s2](Rng& rng) { return std::sqrt(s2) * std_normal(rng); };
  const auto law = OffspringLaw::make_custom(points, step, s2, 1.0);
  EXPECT_EQ(law.family(), Family::Custom);
  // shifted displacements break E sum e^{-V} = 1
  auto bad = [s2](Rng& rng, std::vector<double>& out) {
    out.push_back(std::sqrt(s2) * std_normal(rng));
    out.push_back(std::sqrt(s2) * std_normal(rng));
  };
  EXPECT_THROW(OffspringLaw::make_custom(bad, step, s2, 1.0), DomainError);
}

TEST(Model, FamilyNamesRoundTrip) {
  for (auto f : {Family::DyadicGaussian, Family::PoissonGaussian})
    EXPECT_EQ(parse_family(family_name(f)), f);
  EXPECT_FALSE(parse_family("binary").has_value());
}

}  // namespace
