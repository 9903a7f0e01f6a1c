#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "brw/parallel.hpp"
#include "brw/rng.hpp"
#include "brw/stats.hpp"

namespace {

using namespace brw;

std::vector<double> normals(std::size_t n, double shift, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = shift + std_normal(rng);
  return v;
}

TEST(Rng, ReplicaStreamsArePureFunctions) {
  auto a = replica_stream(42, 7, 3);
  auto b = replica_stream(42, 7, 3);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a(), b());
  EXPECT_NE(replica_stream(42, 7, 3)(), replica_stream(42, 8, 3)());
  EXPECT_NE(replica_stream(42, 7, 3)(), replica_stream(42, 7, 4)());
  EXPECT_NE(replica_stream(42, 7, 3)(), replica_stream(43, 7, 3)());
}

TEST(Rng, UniformRanges) {
  Rng rng(9);
  for (int i = 0; i < 100000; ++i) {
    const double u = uniform01(rng);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double v = uniform_open01(rng);
    ASSERT_GT(v, 0.0);
    ASSERT_LT(v, 1.0);
  }
}

TEST(Parallel, ResultsIndependentOfWorkerCount) {
  auto body = [](Rng& rng, std::size_t i) { return std_normal(rng) + static_cast<double>(i); };
  const auto one = map_replicas(3000, 5, 1, 1, body);
  const auto four = map_replicas(3000, 5, 1, 4, body);
  EXPECT_EQ(one, four);
  auto red = [](unsigned w) {
    return reduce_replicas(
        5000, 3, 2, w, [] { return stats::MomentAccumulator{}; },
        [](stats::MomentAccumulator& a, Rng& rng, std::size_t) { a.add(std_exponential(rng)); },
        [](stats::MomentAccumulator& a, const stats::MomentAccumulator& b) { a.merge(b); });
  };
  EXPECT_EQ(red(1), red(3));
}

TEST(Parallel, ExceptionsPropagate) {
  EXPECT_THROW(map_replicas(1000, 1, 1, 2,
                            [](Rng&, std::size_t i) -> double {
                              if (i == 700) throw std::runtime_error("boom");
                              return 0.0;
                            }),
               std::runtime_error);
}

TEST(Stats, MomentAccumulatorMergeMatchesSequential) {
  const auto v = normals(1001, 1.0, 2);
  stats::MomentAccumulator all, a, b;
  for (std::size_t i = 0; i < v.size(); ++i) {
    all.add(v[i]);
    (i < 400 ? a : b).add(v[i]);
  }
  a.merge(b);
  EXPECT_NEAR(a.mean(), all.mean(), 1e-13);
  EXPECT_NEAR(a.variance(), all.variance(), 1e-12);
  EXPECT_EQ(a.count(), 1001u);
}

TEST(Stats, ZScoreDegenerate) {
  EXPECT_EQ(stats::z_score(1.0, 1.0, 0.0), 0.0);
  EXPECT_TRUE(std::isinf(stats::z_score(1.0, 0.0, 0.0)));
  EXPECT_DOUBLE_EQ(stats::combined_se(3.0, 4.0), 5.0);
}

TEST(Stats, KsIdenticalAndSeparated) {
  const auto a = normals(10000, 0.0, 1);
  const auto r = stats::ks_two_sample(a, a);
  EXPECT_EQ(r.stat, 0.0);
  EXPECT_NEAR(r.p, 1.0, 1e-12);
  const auto b = normals(10000, 3.0, 2);
  EXPECT_LT(stats::ks_two_sample(a, b).p, 1e-6);
  EXPECT_THROW(stats::ks_two_sample(std::vector<double>{}, a), DomainError);
}

TEST(Stats, KsSameLawIsNotRejected) {
  const auto a = normals(20000, 0.0, 3);
  const auto b = normals(20000, 0.0, 4);
  EXPECT_GT(stats::ks_two_sample(a, b).p, 0.001);
}

TEST(Stats, EmpiricalCfOfZeroIsOne) {
  const std::vector<double> z(100, 0.0);
  const auto grid = stats::symmetric_log_grid();
  ASSERT_EQ(grid.size(), 40u);
  for (const auto& c : stats::empirical_cf(z, grid)) {
    EXPECT_DOUBLE_EQ(c.real(), 1.0);
    EXPECT_DOUBLE_EQ(c.imag(), 0.0);
  }
}

TEST(Stats, EmpiricalCfGaussianOracle) {
  const std::size_t n = 1'000'000;
  const auto x = normals(n, 0.0, 5);
  const auto grid = stats::symmetric_log_grid();
  const auto cf = stats::empirical_cf(x, grid);
  double worst = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i)
    worst = std::max(worst, std::abs(cf[i] - std::exp(-0.5 * grid[i] * grid[i])));
  EXPECT_LE(worst, 4.0 / std::sqrt(static_cast<double>(n)));
}

TEST(Stats, HillParetoAndExponential) {
  Rng rng(6);
  std::vector<double> pareto(1'000'000), expo(1'000'000);
  for (auto& x : pareto) x = 1.0 / uniform_open01(rng);
  for (auto& x : expo) x = std_exponential(rng);
  EXPECT_NEAR(stats::hill_index(pareto, 0.01), 1.0, 0.05);
  EXPECT_GT(stats::hill_index(expo, 0.01), 3.0);
  EXPECT_THROW(stats::hill_index(std::vector<double>(50, 1.0)), DomainError);
}

TEST(Stats, TailBalanceAndQuantiles) {
  const std::vector<double> v{-20, -1, 0, 1, 2, 30, 40};
  const auto tb = stats::tail_balance(v, 10.0);
  EXPECT_NEAR(tb.right, 2.0 / 7.0, 1e-15);
  EXPECT_NEAR(tb.left, 1.0 / 7.0, 1e-15);
  const std::vector<double> s{1, 2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(stats::quantile_sorted(s, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(stats::quantile_sorted(s, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(stats::quantile_sorted(s, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(stats::median(std::vector<double>{4, 1, 3, 2}), 2.5);
}

TEST(Stats, SpearmanMonotoneAndTies) {
  const std::vector<double> a{1, 2, 3, 4, 5};
  const std::vector<double> b{2, 4, 8, 16, 32};
  EXPECT_NEAR(stats::spearman(a, b), 1.0, 1e-14);
  const std::vector<double> c{5, 4, 3, 2, 1};
  EXPECT_NEAR(stats::spearman(a, c), -1.0, 1e-14);
  const auto r = stats::ranks(std::vector<double>{10, 20, 20, 30});
  EXPECT_EQ(r, (std::vector<double>{1, 2.5, 2.5, 4}));
}

TEST(Stats, C0PlateauOnParetoIsZero) {
  // density y^-2 on [1, inf): E[D 1{D <= y}] = log y exactly
  Rng rng(8);
  std::vector<double> d(1'000'000);
  for (auto& x : d) x = 1.0 / uniform_open01(rng);
  const std::vector<double> grid{2, 3, 5, 8, 12, 20, 30, 50};
  const auto est = stats::estimate_c0(d, grid);
  ASSERT_TRUE(est.plateau_found);
  EXPECT_NEAR(est.c0_hat, 0.0, 0.05);
}

TEST(Stats, C0PlateauShifted) {
  // D = e^c / U with probability e^{-c}, else 0: E[D 1{D <= y}] = log y - c for y >= e^c
  const double c = 0.7;
  Rng rng(12);
  std::vector<double> d(2'000'000);
  for (auto& x : d) x = uniform01(rng) < std::exp(-c) ? std::exp(c) / uniform_open01(rng) : 0.0;
  const std::vector<double> grid{3, 5, 8, 12, 20, 30, 50};
  const auto est = stats::estimate_c0(d, grid);
  ASSERT_TRUE(est.plateau_found);
  EXPECT_NEAR(est.c0_hat, -c, 0.06);
}

TEST(Stats, C0NoPlateauForExponential) {
  Rng rng(13);
  std::vector<double> d(200000);
  for (auto& x : d) x = std_exponential(rng);
  const std::vector<double> grid{2, 5, 10, 20, 50, 100, 200};
  EXPECT_FALSE(stats::estimate_c0(d, grid).plateau_found);
}

}  // namespace
