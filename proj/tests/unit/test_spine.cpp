#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "brw/numeric.hpp"
#include "brw/parallel.hpp"
#include "brw/renewal.hpp"
#include "brw/spine.hpp"
#include "brw/stats.hpp"
#include "brw/walk.hpp"

namespace {

using namespace brw;
using namespace brw::spine;

const OffspringLaw kLaw = OffspringLaw::make_dyadic_gaussian();

const renewal::RenewalTable& table() {
  static const auto t =
      renewal::estimate_R(kLaw, renewal::default_grid(), 200000, renewal::Method::Occupation, 77);
  return t;
}

TEST(Spine, EqualDisplacementsSplitEvenly) {
  Rng rng(1);
  stats::MomentAccumulator first;
  for (int i = 0; i < 100000; ++i) first.add(select_spine_index({0.3, 0.3}, rng) == 0 ? 1.0 : 0.0);
  EXPECT_LE(std::fabs(stats::z_score(first.mean(), 0.5, first.se())), 3.0);
  EXPECT_THROW(select_spine_index({}, rng), DomainError);
}

TEST(Spine, SelectionProportionalToExpMinusV) {
  Rng rng(2);
  const std::vector<double> d{0.0, 1.0, 2.0};
  const double z = 1.0 + std::exp(-1.0) + std::exp(-2.0);
  std::vector<double> hits(3, 0.0);
  const int n = 200000;
  for (int i = 0; i < n; ++i) hits[select_spine_index(d, rng)] += 1.0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double p = std::exp(-d[k]) / z;
    EXPECT_LE(std::fabs(hits[k] / n - p), 3.0 * std::sqrt(p * (1 - p) / n));
  }
}

TEST(Spine, SpineUnderQIsTheWalk) {
  const int n = 8;
  const auto end = map_replicas(1'000'000, 3, 1, 1,
                                [](Rng& rng, std::size_t) { return sample_spine_Q(kLaw, 8, rng).positions.back(); });
  stats::MomentAccumulator m, sq;
  for (double x : end) {
    m.add(x);
    sq.add(x * x);
  }
  EXPECT_LE(std::fabs(stats::z_score(m.mean(), 0.0, m.se())), 3.0);
  EXPECT_LE(std::fabs(stats::z_score(sq.mean(), n * kLaw.sigma2(), sq.se())), 3.0);
}

TEST(Spine, SpineKsAgainstWalk) {
  const auto sp = map_replicas(50000, 4, 1, 1,
                               [](Rng& rng, std::size_t) { return sample_spine_Q(kLaw, 4, rng).positions.back(); });
  const auto wk = map_replicas(50000, 4, 2, 1,
                               [](Rng& rng, std::size_t) { return walk::simulate_path(kLaw, 4, 0.0, rng).values.back(); });
  EXPECT_GT(stats::ks_two_sample(sp, wk).p, 0.01);
}

TEST(Spine, SizeBiasedPoissonCount) {
  const auto law = OffspringLaw::make_poisson_gaussian(3.0);
  Rng rng(5);
  stats::MomentAccumulator k;
  for (int i = 0; i < 100000; ++i) k.add(static_cast<double>(sample_size_biased_offspring(law, rng).size()));
  EXPECT_LE(std::fabs(stats::z_score(k.mean(), 4.0, k.se())), 3.0);
}

TEST(Spine, SiblingsAreRecorded) {
  Rng rng(6);
  const auto s = sample_spine_Q(kLaw, 5, rng);
  EXPECT_EQ(s.positions.size(), 6u);
  ASSERT_EQ(s.sibling_displacements.size(), 5u);
  for (const auto& sib : s.sibling_displacements) EXPECT_EQ(sib.size(), 1u);
  EXPECT_THROW(sample_spine_Q(kLaw, -1, rng), DomainError);
}

TEST(Spine, ConditionedWalkStaysAboveMinusY) {
  const double y = 2.0;
  for (std::uint64_t r = 0; r < 2000; ++r) {
    Rng rng = replica_stream(7, r, 0);
    const auto s = sample_spine_walk_Qy(kLaw, y, 10, table(), rng);
    ASSERT_EQ(s.positions.size(), 11u);
    for (double v : s.positions) ASSERT_GE(v, -y);
  }
}

TEST(Spine, ChangeOfMeasureOnTheWalkMarginal) {
  // E_{Q^{-y}}[1{S_n in A} R(y) / R(S_n + y)] = P(S_n in A, min S >= -y)
  const int n = 5;
  const double y = 2.0;
  const auto& R = table();
  const auto lhs = map_replicas(200000, 8, 1, 1, [&](Rng& rng, std::size_t) {
    const double s = sample_spine_walk_Qy(kLaw, y, n, R, rng).positions.back();
    return (s >= 0.0 && s <= 1.0) ? R(y) / R(s + y) : 0.0;
  });
  const auto rhs = map_replicas(2'000'000, 8, 2, 1, [&](Rng& rng, std::size_t) {
    const auto p = walk::simulate_path(kLaw, n, 0.0, rng);
    return (p.running_min >= -y && p.values.back() >= 0.0 && p.values.back() <= 1.0) ? 1.0 : 0.0;
  });
  stats::MomentAccumulator a, b;
  for (double x : lhs) a.add(x);
  for (double x : rhs) b.add(x);
  // the table error enters through R(y) / R(s + y); bound it by the relative SEs
  const double rel = R.se_at(y) / R(y) + R.se_at(3.0) / R(2.0);
  const double se = std::sqrt(a.se() * a.se() + b.se() * b.se() + (rel * a.mean()) * (rel * a.mean()));
  EXPECT_LE(std::fabs(stats::z_score(a.mean(), b.mean(), se)), 3.0);
}

TEST(Spine, LargeYConditioningVanishes) {
  const double y = 60.0;
  const auto& R = table();
  const auto first = map_replicas(50000, 9, 1, 1, [&](Rng& rng, std::size_t) {
    return sample_spine_walk_Qy(kLaw, y, 1, R, rng).positions.back();
  });
  const auto free = map_replicas(50000, 9, 2, 1, [&](Rng& rng, std::size_t) { return kLaw.sample_step(rng); });
  EXPECT_GT(stats::ks_two_sample(first, free).p, 0.01);
}

TEST(Spine, EnvelopeViolationIsDetected) {
  Rng rng(10);
  auto steep = [](double u) { return 10.0 * (1.0 + u); };
  EXPECT_THROW(sample_spine_walk_Qy(kLaw, 1.0, 5, steep, 1.0, rng), ConsistencyError);
  EXPECT_THROW(sample_spine_walk_Qy(kLaw, -1.0, 5, table(), rng), DomainError);
}

TEST(Spine, ManyToOneAtZero) {
  const auto r = verify_many_to_one(kLaw, 10, {0.0, 1e9}, 20000, 11, 1);
  ASSERT_EQ(r.points.size(), 2u);
  EXPECT_NEAR(r.points[0].exact, 0.5, 1e-15);
  EXPECT_LE(std::fabs(r.points[0].z_tree_exact), 3.0);
  EXPECT_LE(std::fabs(r.points[0].z_tree_walk), 3.0);
  // indicator always 1: tree side is E W_n, walk side is 1
  EXPECT_DOUBLE_EQ(r.points[1].walk_mean, 1.0);
  EXPECT_LE(std::fabs(stats::z_score(r.points[1].tree_mean, 1.0, r.points[1].tree_se)), 3.0);
}

}  // namespace
