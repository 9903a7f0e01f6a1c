#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "brw/engine.hpp"
#include "brw/parallel.hpp"
#include "brw/renewal.hpp"
#include "brw/stats.hpp"

namespace {

using namespace brw;
using namespace brw::engine;

const OffspringLaw kLaw = OffspringLaw::make_dyadic_gaussian();

Generation with_positions(std::vector<double> v) {
  Generation g;
  g.positions = std::move(v);
  return g;
}

TEST(Engine, RootEvolvesIntoTwoParticles) {
  EngineConfig cfg;
  Rng rng(1);
  const auto g = evolve(make_root(cfg), kLaw, rng, cfg);
  EXPECT_EQ(g.index, 1);
  EXPECT_EQ(g.size(), 2u);
}

TEST(Engine, PruneEverythingRecordsChildMass) {
  EngineConfig keep;
  EngineConfig drop;
  drop.prune_cap = -std::numeric_limits<double>::infinity();
  Rng r1(4), r2(4);
  const auto kept = evolve(make_root(keep), kLaw, r1, keep);
  const auto lost = evolve(make_root(drop), kLaw, r2, drop);
  EXPECT_EQ(lost.size(), 0u);
  EXPECT_NEAR(lost.lost_mass_upper, compute_W(kept), 1e-15);
  EXPECT_NEAR(lost.lost_derivative, compute_D(kept), 1e-15);
}

TEST(Engine, DistantKillingBarrierLeavesLedgerEmpty) {
  EngineConfig cfg;
  cfg.n_max = 6;
  cfg.killing = {{-1e6, 0}};
  Rng rng(2);
  Generation g = make_root(cfg);
  for (int k = 0; k < 6; ++k) g = evolve(std::move(g), kLaw, rng, cfg);
  EXPECT_TRUE(g.crossing_ledger.empty());
  EXPECT_EQ(g.size(), 64u);
}

TEST(Engine, KilledParticlesAreLoggedOnce) {
  EngineConfig cfg;
  cfg.killing = {{0.5, 0}};
  Rng rng(3);
  Generation g = make_root(cfg);
  std::size_t alive_and_killed = 0;
  for (int k = 0; k < 5; ++k) {
    const std::size_t parents = g.size();
    const std::size_t before = g.crossing_ledger.size();
    g = evolve(std::move(g), kLaw, rng, cfg);
    alive_and_killed = g.size() + (g.crossing_ledger.size() - before);
    EXPECT_EQ(alive_and_killed, 2 * parents);
    for (double v : g.positions) EXPECT_GE(v, 0.5);
  }
  for (const auto& r : g.crossing_ledger) {
    EXPECT_LT(r.value, 0.5);
    EXPECT_DOUBLE_EQ(r.weight, std::exp(-r.value));
  }
}

TEST(Engine, WAndDDirectEvaluation) {
  EXPECT_DOUBLE_EQ(compute_W(with_positions({0.0})), 1.0);
  EXPECT_DOUBLE_EQ(compute_D(with_positions({0.0})), 0.0);
  const auto g = with_positions({0.0, std::numbers::ln2});
  EXPECT_NEAR(compute_W(g), 1.5, 1e-15);
  EXPECT_NEAR(compute_D(g), std::numbers::ln2 / 2.0, 1e-15);
  EXPECT_NEAR(compute_D(g), 0.3466, 1e-4);
  EXPECT_EQ(compute_W(with_positions({})), 0.0);
  EXPECT_EQ(compute_D(with_positions({})), 0.0);
}

TEST(Engine, TrivialTrack) {
  EngineConfig cfg;
  Rng rng(5);
  const auto t = run_tree(kLaw, cfg, rng);
  ASSERT_EQ(t.W.size(), 1u);
  EXPECT_EQ(t.W[0], 1.0);
  EXPECT_EQ(t.D[0], 0.0);
  EXPECT_EQ(t.D_infty_proxy, 0.0);
}

TEST(Engine, RunTreeIsDeterministic) {
  EngineConfig cfg;
  cfg.n_max = 8;
  cfg.horizon = 4;
  cfg.prune_cap = 10.0;
  Rng a = replica_stream(9, 3, 1), b = replica_stream(9, 3, 1);
  const auto ta = run_tree(kLaw, cfg, a);
  const auto tb = run_tree(kLaw, cfg, b);
  EXPECT_EQ(ta.W, tb.W);
  EXPECT_EQ(ta.D, tb.D);
  EXPECT_EQ(ta.W.size(), 13u);
  EXPECT_EQ(ta.D_infty_proxy, ta.D.back());
}

TEST(Engine, ParticleCapRaisesBudgetError) {
  EngineConfig cfg;
  cfg.n_max = 12;
  cfg.particle_cap = 100;
  Rng rng(1);
  try {
    run_tree(kLaw, cfg, rng);
    FAIL() << "expected BudgetExceeded";
  } catch (const BudgetExceeded& e) {
    EXPECT_EQ(e.generation(), 7);  // 2^7 = 128 > 100
  }
}

TEST(Engine, ConfigValidation) {
  EngineConfig cfg;
  cfg.n_max = -1;
  Rng rng(1);
  EXPECT_THROW(run_tree(kLaw, cfg, rng), DomainError);
  EXPECT_THROW(default_schedule(1), DomainError);
  EXPECT_THROW(make_schedule(4, 0.0), DomainError);
  EXPECT_THROW(ceil_an(0.5, 4), DomainError);
  EXPECT_EQ(ceil_an(1.0, 12), 12);
  EXPECT_EQ(ceil_an(1.5, 7), 11);
  const auto s = default_schedule(16);
  EXPECT_NEAR(s.gamma_n, 0.5 * std::log(16.0) + std::log(16.0), 1e-15);
}

TEST(Engine, TruncatedMartingaleExamples) {
  const auto R = renewal::make_table({0.0, 1.0, 2.0}, {1.0, 2.0, 3.0});
  EngineConfig cfg;
  cfg.checkpoints = {0};
  const auto root = make_root(cfg);
  EXPECT_DOUBLE_EQ(truncated_martingale(root, 0.0, R), 1.0);
  EXPECT_THROW(truncated_martingale(root, -0.1, R), DomainError);
  Generation g = with_positions({-3.0, -2.5});
  g.index = 1;
  g.checkpoints = {0};
  g.checkpoint_mins = {{-3.0, -2.5}};
  EXPECT_EQ(truncated_martingale(g, 2.0, R), 0.0);
  // one survivor at -1 with minimum -1: R(1) e^{1}
  g.positions = {-1.0, -3.0};
  g.checkpoint_mins = {{-1.0, -3.0}};
  EXPECT_NEAR(truncated_martingale(g, 2.0, R), 2.0 * std::exp(1.0), 1e-14);
}

TEST(Engine, CrossingCountExamples) {
  const auto empty = crossing_counts({}, 1, 10, 2.0, 1.0);
  EXPECT_EQ(empty.N, 0.0);
  EXPECT_EQ(empty.N_hat, 0.0);
  const double y = 2.0, beta = std::log(300.0);
  const double v = -y - beta / 2.0;
  const std::vector<CrossingRecord> ledger{{3, v, std::exp(-v), -y, 0}};
  const auto c = crossing_counts(ledger, 1, 300, y, beta);
  EXPECT_NEAR(c.N_hat, (beta / 2.0) * std::exp(y + beta / 2.0), 1e-10);
  EXPECT_NEAR(c.N, std::exp(y + beta / 2.0), 1e-10);
  // outside the window or a different barrier: ignored
  EXPECT_EQ(crossing_counts(ledger, 4, 300, y, beta).N, 0.0);
  EXPECT_EQ(crossing_counts(ledger, 1, 300, 1.0, beta).N, 0.0);
}

EngineConfig marked_config(double gamma, int n = 4, double a = 1.0, int extra = 2) {
  EngineConfig cfg;
  cfg.n_max = n;
  cfg.horizon = ceil_an(a, n) + extra - n;
  BarrierSchedule s{n, 1.0, gamma};
  cfg.marked.push_back({s, a, {ceil_an(a, n), ceil_an(a, n) + extra}});
  return cfg;
}

TEST(Engine, BarrierAtMinusInfinityKeepsEverythingAbove) {
  const auto cfg = marked_config(-std::numeric_limits<double>::infinity());
  Rng rng(6);
  const auto t = run_tree(kLaw, cfg, rng, NoObserver{}, 1.2, 0.8);
  ASSERT_EQ(t.barrier_series.size(), 2u);
  for (const auto& bp : t.barrier_series) {
    EXPECT_DOUBLE_EQ(bp.q.W_tilde, bp.q.W);
    EXPECT_EQ(bp.q.count_above, bp.q.count_total);
    EXPECT_EQ(bp.q.violations, 0u);
  }
}

TEST(Engine, BarrierAboveEverythingMarksAllCrossed) {
  const auto cfg = marked_config(1e6);
  Rng rng(7);
  const auto t = run_tree(kLaw, cfg, rng, NoObserver{}, 1.2, 0.8);
  for (const auto& bp : t.barrier_series) {
    EXPECT_EQ(bp.q.W_tilde, 0.0);
    EXPECT_EQ(bp.q.count_above, 0u);
    EXPECT_EQ(bp.q.count_good + bp.q.count_bad, bp.q.count_total);
    EXPECT_EQ(bp.q.violations, 0u);
  }
}

TEST(Engine, BarrierPartitionIsExhaustiveAndDecompositionExact) {
  const int n = 8;
  auto cfg = marked_config(default_schedule(n).gamma_n, n, 1.0, 6);
  cfg.marked[0].schedule = default_schedule(n);
  cfg.prune_cap = 12.0;
  std::size_t crossed = 0;
  for (std::uint64_t r = 0; r < 200; ++r) {
    Rng rng = replica_stream(11, r, 0);
    const auto t = run_tree(kLaw, cfg, rng, NoObserver{}, 1.2, 0.8);
    for (const auto& bp : t.barrier_series) {
      const auto& q = bp.q;
      ASSERT_EQ(q.violations, 0u);
      ASSERT_EQ(q.count_above + q.count_good + q.count_bad, q.count_total);
      const double scale = std::fabs(1.2 * q.D) + std::fabs(q.D_barrier) + std::fabs(q.F_good) +
                           std::fabs(q.F_bad) + std::fabs(q.anchor_term) + std::fabs(q.W_tilde) * 10 + 1e-300;
      ASSERT_LT(std::fabs(q.reconstruction_residual) / scale, 1e-12);
      crossed += q.count_good + q.count_bad;
    }
  }
  EXPECT_GT(crossed, 0u);  // the test exercised both classes of the split
}

TEST(Engine, GoodCrossersHaveCleanHistoryAndSmallUndershoot) {
  const int n = 6;
  EngineConfig cfg;
  cfg.n_max = n;
  cfg.horizon = 5;
  const auto s = make_schedule(n, 0.8);
  cfg.marked.push_back({s, 1.0, {}});
  std::size_t good = 0;
  for (std::uint64_t r = 0; r < 300; ++r) {
    Rng rng = replica_stream(13, r, 0);
    run_tree(kLaw, cfg, rng, [&](const Generation& g) {
      if (g.index <= n) return;
      const auto& ms = g.marks[0];
      const auto& min_n = g.mins_since(n);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (ms.cls[i] == MarkClass::Good) {
          ++good;
          ASSERT_LT(ms.anchor[i], s.gamma_n);
          ASSERT_GE(ms.anchor[i], s.gamma_n - 0.5 * s.beta_n);
          ASSERT_LE(min_n[i], ms.anchor[i]);
        }
        if (ms.cls[i] == MarkClass::Above) {
          ASSERT_GE(min_n[i], s.gamma_n);
        }
      }
    });
  }
  EXPECT_GT(good, 0u);
}

TEST(Engine, FluctuationStatisticExamples) {
  MartingaleTrack t;
  t.W = {1.0, 0.8, 0.6, 0.7, 0.5};
  t.D = {0.0, 0.1, 0.2, 0.3, 0.4};
  t.D_infty_proxy = t.D.back();  // M = 0
  const double v = fluctuation_statistic(t, 4, 1.0, LogCorrection::HalfLogN);
  EXPECT_NEAR(v, std::log(4.0) / 2.0, 1e-15);  // sqrt(4) (log 4 / 2) 0.5
  t.W.back() = 0.0;
  EXPECT_EQ(fluctuation_statistic(t, 4, 1.0, LogCorrection::HalfLogN), 0.0);
  EXPECT_THROW(fluctuation_statistic(t, 4, 1.5, LogCorrection::HalfLogN), DomainError);
  EXPECT_THROW(fluctuation_statistic(t, 4, 1.0, LogCorrection::DeltaVariant), DomainError);
  t.D_infty_proxy = 2.0;
  const double s2 = 2.0 * std::numbers::ln2;
  const double expected = 2.0 * (2.0 - 0.4 + std::log(4.0) / std::sqrt(2 * std::numbers::pi * s2 * 4) * 0.9 * 2.0);
  EXPECT_NEAR(fluctuation_statistic(t, 4, 1.0, LogCorrection::DeltaVariant, s2, 0.9), expected, 1e-14);
}

TEST(Engine, MartingaleMeansSmallRun) {
  // shallow on purpose: E W_n^2 doubles per generation, so deeper sample SEs are unreliable.
  // The summands are lognormal-like and z is skewed even here, hence 4 SE rather than 3.
  EngineConfig cfg;
  cfg.n_max = 4;
  struct Acc {
    std::vector<stats::MomentAccumulator> W, D;
  };
  const auto acc = reduce_replicas(
      50000, 17, 1, 1, [] { return Acc{std::vector<stats::MomentAccumulator>(5), std::vector<stats::MomentAccumulator>(5)}; },
      [&](Acc& a, Rng& rng, std::size_t) {
        const auto t = run_tree(kLaw, cfg, rng);
        for (std::size_t k = 0; k < 5; ++k) {
          a.W[k].add(t.W[k]);
          a.D[k].add(t.D[k]);
        }
      },
      [](Acc& a, const Acc& b) {
        for (std::size_t k = 0; k < 5; ++k) {
          a.W[k].merge(b.W[k]);
          a.D[k].merge(b.D[k]);
        }
      });
  for (std::size_t k = 1; k < 5; ++k) {
    EXPECT_LE(std::fabs(stats::z_score(acc.W[k].mean(), 1.0, acc.W[k].se())), 4.0) << "n=" << k;
    EXPECT_LE(std::fabs(stats::z_score(acc.D[k].mean(), 0.0, acc.D[k].se())), 4.0) << "n=" << k;
  }
}

TEST(Engine, PruningConservesMassInExpectation) {
  EngineConfig cfg;
  cfg.n_max = 10;
  cfg.prune_cap = 4.0;
  stats::MomentAccumulator total;
  for (std::uint64_t r = 0; r < 20000; ++r) {
    Rng rng = replica_stream(19, r, 0);
    const auto t = run_tree(kLaw, cfg, rng);
    total.add(t.W.back() + t.lost_mass.back());
  }
  EXPECT_LE(std::fabs(stats::z_score(total.mean(), 1.0, total.se())), 3.0);
}

}  // namespace
