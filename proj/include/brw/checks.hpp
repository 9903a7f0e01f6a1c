#pragma once

// Verification checks shared by the CLI experiments and the acceptance
// binary. Each check returns pass/fail verdicts with their numbers plus the
// CSV tables it produced. Tolerances live here, next to the checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"

#include "brw/engine.hpp"
#include "brw/io.hpp"
#include "brw/model.hpp"
#include "brw/parallel.hpp"
#include "brw/renewal.hpp"
#include "brw/spine.hpp"
#include "brw/stable.hpp"
#include "brw/stats.hpp"
#include "brw/walk.hpp"

namespace brw::checks {

using json = nlohmann::json;
using io::strf;

inline constexpr double kZ = 3.0;  ///< every "within 3 SE" gate

struct Verdict {
  std::string id;
  bool passed = false;
  std::string detail;
  json metrics = json::object();
};

struct CheckReport {
  std::vector<Verdict> verdicts;
  std::vector<io::CsvTable> tables;

  bool all_passed() const {
    return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.passed; });
  }
  void append(CheckReport other) {
    for (auto& v : other.verdicts) verdicts.push_back(std::move(v));
    for (auto& t : other.tables) tables.push_back(std::move(t));
  }
};

struct RunEnv {
  std::uint64_t seed = 1;
  unsigned workers = 1;
};

using Moments = std::vector<stats::MomentAccumulator>;

inline void merge_moments(Moments& into, const Moments& from) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i].merge(from[i]);
}

// ---------------------------------------------------------------- normalization

inline CheckReport check_normalization(const OffspringLaw& law) {
  CheckReport rep;
  const auto r = verify_normalization(law);
  Verdict v{"normalization", false, "", json::object()};
  const double tol = 1e-10;
  v.passed = std::fabs(r.m1 - 1.0) < tol && std::fabs(r.m2) < tol && std::fabs(r.sigma2_hat - law.sigma2()) < tol &&
             std::isfinite(r.a5_moment);
  v.detail = strf("m1=%.12f m2=%.3e sigma2=%.10f (law %.10f) a5=%.6f", r.m1, r.m2, r.sigma2_hat, law.sigma2(),
                  r.a5_moment);
  v.metrics = {{"m1", r.m1}, {"m2", r.m2}, {"sigma2_hat", r.sigma2_hat}, {"a5_moment", r.a5_moment}};
  rep.verdicts.push_back(v);
  return rep;
}

// ---------------------------------------------------------------- martingale means

struct MartingaleMeansOptions {
  int n_max = 14;
  std::size_t replicas = 200000;
  double prune_cap = 16.0;
  std::size_t particle_cap = 10'000'000;
};

/// E W_n = 1 and E D_n = 0 for n = 0..n_max, each within 3 SE.
inline CheckReport check_martingale_means(const OffspringLaw& law, const MartingaleMeansOptions& o, const RunEnv& env) {
  engine::EngineConfig cfg;
  cfg.n_max = o.n_max;
  cfg.prune_cap = o.prune_cap;
  cfg.particle_cap = o.particle_cap;
  const std::size_t G = static_cast<std::size_t>(o.n_max) + 1;
  struct Acc {
    Moments W, D, lost;
  };
  const Acc acc = reduce_replicas(
      o.replicas, env.seed, 0x101u, env.workers, [&] { return Acc{Moments(G), Moments(G), Moments(G)}; },
      [&](Acc& a, Rng& rng, std::size_t) {
        const auto t = engine::run_tree(law, cfg, rng);
        for (std::size_t k = 0; k < G; ++k) {
          a.W[k].add(t.W[k]);
          a.D[k].add(t.D[k]);
          a.lost[k].add(t.lost_mass[k]);
        }
      },
      [](Acc& into, const Acc& from) {
        merge_moments(into.W, from.W);
        merge_moments(into.D, from.D);
        merge_moments(into.lost, from.lost);
      });
  CheckReport rep;
  io::CsvTable tab{"martingale_means", {"n", "W_mean", "W_se", "W_z", "D_mean", "D_se", "D_z", "lost_mass_mean"}, {}};
  double worst = 0.0;
  int worst_n = 0;
  bool mass_ok = true;
  for (std::size_t k = 0; k < G; ++k) {
    const double zw = stats::z_score(acc.W[k].mean(), 1.0, acc.W[k].se());
    const double zd = stats::z_score(acc.D[k].mean(), 0.0, acc.D[k].se());
    tab.add({static_cast<std::int64_t>(k), acc.W[k].mean(), acc.W[k].se(), zw, acc.D[k].mean(), acc.D[k].se(), zd,
             acc.lost[k].mean()});
    const double m = std::max(std::fabs(zw), std::fabs(zd));
    if (!(m <= worst)) {
      worst = m;
      worst_n = static_cast<int>(k);
    }
    // mean W_m lies in [1 - mean lost mass, 1] up to 3 SE
    const double bound = acc.lost[k].mean();
    if (acc.W[k].mean() < 1.0 - bound - kZ * acc.W[k].se() || acc.W[k].mean() > 1.0 + kZ * acc.W[k].se())
      mass_ok = false;
  }
  Verdict v{"martingale_means", worst <= kZ && mass_ok, "", json::object()};
  v.detail = strf("n=0..%d, %zu replicas, prune cap %g: max |z| = %.2f at n=%d; lost mass at n_max %.2e", o.n_max,
                  o.replicas, o.prune_cap, worst, worst_n, acc.lost.back().mean());
  v.metrics = {{"max_abs_z", worst}, {"worst_n", worst_n}, {"mass_bracket_ok", mass_ok},
               {"lost_mass_final", acc.lost.back().mean()}};
  rep.verdicts.push_back(v);
  rep.tables.push_back(std::move(tab));
  return rep;
}

// ---------------------------------------------------------------- many-to-one

struct ManyToOneOptions {
  int n = 10;
  std::vector<double> t_grid{-1.0, 0.0, 1.0, 2.0};
  std::size_t replicas = 1'000'000;
};

inline CheckReport check_many_to_one(const OffspringLaw& law, const ManyToOneOptions& o, const RunEnv& env) {
  const auto r = spine::verify_many_to_one(law, o.n, o.t_grid, o.replicas, env.seed, env.workers);
  CheckReport rep;
  io::CsvTable tab{"many_to_one",
                   {"n", "t", "tree_mean", "tree_se", "walk_mean", "walk_se", "exact", "z_tree_exact", "z_tree_walk"},
                   {}};
  double worst = 0.0;
  const bool gaussian = law.step_law().gaussian;
  for (const auto& p : r.points) {
    tab.add({static_cast<std::int64_t>(o.n), p.t, p.tree_mean, p.tree_se, p.walk_mean, p.walk_se, p.exact,
             p.z_tree_exact, p.z_tree_walk});
    worst = std::max(worst, std::fabs(gaussian ? p.z_tree_exact : p.z_tree_walk));
  }
  Verdict v{"many_to_one", worst <= kZ, "", json::object()};
  v.detail = strf("n=%d, %zu trees: max |z| (tree vs %s) = %.2f over %zu t-values", o.n, o.replicas,
                  gaussian ? "Gaussian CDF" : "walk", worst, o.t_grid.size());
  v.metrics = {{"max_abs_z", worst}};
  rep.verdicts.push_back(v);
  rep.tables.push_back(std::move(tab));
  return rep;
}

// ---------------------------------------------------------------- renewal

struct RenewalOptions {
  std::vector<double> grid = renewal::default_grid();
  std::size_t replicas = 1'000'000;
  std::size_t harmonic_replicas = 1'000'000;
  std::uint64_t step_cap = walk::kDefaultStepCap;
  std::vector<double> compare_points{0.5, 1.0, 2.0, 5.0, 10.0};
};

struct RenewalBundle {
  renewal::RenewalTable ladder;
  renewal::RenewalTable occupation;
};

inline RenewalBundle build_renewal(const OffspringLaw& law, const RenewalOptions& o, const RunEnv& env) {
  renewal::EstimateOptions eo;
  eo.step_cap = o.step_cap;
  eo.workers = env.workers;
  RenewalBundle b;
  b.ladder = renewal::estimate_R(law, o.grid, o.replicas, renewal::Method::LadderExpectation, env.seed, eo);
  b.occupation = renewal::estimate_R(law, o.grid, o.replicas, renewal::Method::Occupation, env.seed, eo);
  return b;
}

inline io::CsvTable renewal_csv(const renewal::RenewalTable& t, const std::string& name) {
  io::CsvTable tab{name, {"y", "R_hat", "se", "method"}, {}};
  for (std::size_t i = 0; i < t.grid.size(); ++i)
    tab.add({t.grid[i], t.R_hat[i], t.se[i], std::string(renewal::method_name(t.method))});
  return tab;
}

inline json renewal_constants_json(const renewal::RenewalTable& t) {
  const auto& c = t.constants;
  return {{"c_star", c.c_star},
          {"c_star_se", c.c_star_se},
          {"alpha_star", c.alpha_star},
          {"alpha_star_se", c.alpha_star_se},
          {"c_star_ladder", c.c_star_ladder},
          {"c_star_ladder_se", c.c_star_ladder_se},
          {"relative_gap", c.relative_gap},
          {"disagree_3se", c.disagree},
          {"censored_fraction", t.censored_fraction},
          {"replicas", t.replicas},
          {"method", std::string(renewal::method_name(t.method))}};
}

inline std::size_t grid_index(const std::vector<double>& grid, double y) {
  const auto it = std::find(grid.begin(), grid.end(), y);
  if (it == grid.end()) throw DomainError(strf("grid point %g missing from the renewal grid", y));
  return static_cast<std::size_t>(it - grid.begin());
}

/// R(0) = 1 and R(-1) = 0 exactly; the two estimators agree within 3 SE.
inline CheckReport check_renewal_dual(const RenewalBundle& b, const RenewalOptions& o) {
  CheckReport rep;
  const auto& L = b.ladder;
  const auto& C = b.occupation;
  const double r0 = L.R_hat[grid_index(L.grid, 0.0)];
  const double rneg = L(-1.0);
  io::CsvTable tab{"renewal_dual", {"y", "ladder", "ladder_se", "occupation", "occupation_se", "z"}, {}};
  double worst = 0.0;
  for (double y : o.compare_points) {
    const std::size_t i = grid_index(L.grid, y);
    const double z = stats::z_score(L.R_hat[i], C.R_hat[i], stats::combined_se(L.se[i], C.se[i]));
    worst = std::max(worst, std::fabs(z));
    tab.add({y, L.R_hat[i], L.se[i], C.R_hat[i], C.se[i], z});
  }
  const double cens = std::max(L.censored_fraction, C.censored_fraction);
  Verdict v{"renewal_exactness", r0 == 1.0 && rneg == 0.0 && worst <= kZ && cens < 1e-2, "", json::object()};
  v.detail = strf("R(0)=%.17g R(-1)=%g; dual max |z| = %.2f on %zu points; censored %.1e / %.1e", r0, rneg, worst,
                  o.compare_points.size(), L.censored_fraction, C.censored_fraction);
  v.metrics = {{"R0", r0}, {"R_minus1", rneg}, {"max_abs_z", worst}, {"censored_fraction", cens}};
  rep.verdicts.push_back(v);
  rep.tables.push_back(std::move(tab));
  rep.tables.push_back(renewal_csv(L, "renewal_ladder"));
  rep.tables.push_back(renewal_csv(C, "renewal_occupation"));
  return rep;
}

/// Slope estimate of c* against 1 / mean|H_1|, relative gap below 5%.
inline CheckReport check_c_star(const renewal::RenewalTable& L) {
  CheckReport rep;
  const auto& c = L.constants;
  const double gap = std::fabs(c.c_star - c.c_star_ladder) / c.c_star;
  Verdict v{"c_star_identity", std::isfinite(gap) && gap < 0.05, "", renewal_constants_json(L)};
  v.detail = strf("slope c*=%.5f(%.5f), 1/E|H1|=%.5f(%.5f), relative gap %.3f%%; alpha*=%.4f(%.4f)", c.c_star,
                  c.c_star_se, c.c_star_ladder, c.c_star_ladder_se, 100.0 * gap, c.alpha_star, c.alpha_star_se);
  rep.verdicts.push_back(v);
  return rep;
}

inline CheckReport check_harmonicity(const renewal::RenewalTable& L, const OffspringLaw& law, const RenewalOptions& o,
                                     const RunEnv& env) {
  const auto h = renewal::check_harmonic(L, law, o.harmonic_replicas, env.seed, env.workers);
  CheckReport rep;
  io::CsvTable tab{"harmonicity", {"y", "lhs", "lhs_se", "rhs", "residual", "combined_se", "z"}, {}};
  for (const auto& p : h.points) tab.add({p.y, p.lhs, p.lhs_se, p.rhs, p.residual, p.combined_se, p.z});
  Verdict v{"harmonicity", h.max_abs_z <= kZ, "", json::object()};
  v.detail = strf("%zu grid points: max |z| = %.2f at y=%g; chi2=%.2f on %zu dof (p=%.3f)", h.points.size(),
                  h.max_abs_z, h.y_at_max, h.chi2, h.dof, h.chi2_p);
  v.metrics = {{"max_abs_z", h.max_abs_z}, {"y_at_max", h.y_at_max}, {"chi2", h.chi2}, {"chi2_p", h.chi2_p}};
  rep.verdicts.push_back(v);
  rep.tables.push_back(std::move(tab));
  return rep;
}

// ---------------------------------------------------------------- truncated martingale

struct TruncatedOptions {
  int n = 10;
  std::vector<double> y_values{0.0, 1.0, 2.0, 5.0};
  std::size_t replicas = 100000;
  double prune_cap = engine::kInf;
};

/// E D_n^{-y} = R(y). The combined SE adds the table SE at y and a bound on
/// the table error propagated through the sum.
inline CheckReport check_truncated_martingale(const OffspringLaw& law, const renewal::RenewalTable& R,
                                              const TruncatedOptions& o, const RunEnv& env) {
  engine::EngineConfig cfg;
  cfg.n_max = o.n;
  cfg.checkpoints = {0};
  cfg.prune_cap = o.prune_cap;
  const std::size_t Y = o.y_values.size();
  struct Acc {
    Moments d, bound;
  };
  const Acc acc = reduce_replicas(
      o.replicas, env.seed, 0x601u, env.workers, [&] { return Acc{Moments(Y), Moments(Y)}; },
      [&](Acc& a, Rng& rng, std::size_t) {
        engine::run_tree(law, cfg, rng, [&](const engine::Generation& g) {
          if (g.index != o.n) return;
          const auto& mins = g.mins_since(0);
          for (std::size_t j = 0; j < Y; ++j) {
            const double y = o.y_values[j];
            a.d[j].add(engine::truncated_martingale(g, y, R));
            CompensatedSum s;
            for (std::size_t i = 0; i < g.size(); ++i)
              if (mins[i] >= -y) s.add(R.se_at(g.positions[i] + y) * std::exp(-g.positions[i]));
            a.bound[j].add(s.value());
          }
        });
      },
      [](Acc& into, const Acc& from) {
        merge_moments(into.d, from.d);
        merge_moments(into.bound, from.bound);
      });
  CheckReport rep;
  io::CsvTable tab{"truncated_martingale", {"n", "y", "mean", "mc_se", "R_hat", "R_se", "combined_se", "z"}, {}};
  double worst = 0.0;
  for (std::size_t j = 0; j < Y; ++j) {
    const double y = o.y_values[j];
    const double comb = std::sqrt(acc.d[j].se() * acc.d[j].se() + R.se_at(y) * R.se_at(y) +
                                  acc.bound[j].mean() * acc.bound[j].mean());
    const double z = stats::z_score(acc.d[j].mean(), R(y), comb);
    worst = std::max(worst, std::fabs(z));
    tab.add({static_cast<std::int64_t>(o.n), y, acc.d[j].mean(), acc.d[j].se(), R(y), R.se_at(y), comb, z});
  }
  Verdict v{"truncated_martingale", worst <= kZ, "", json::object()};
  v.detail = strf("n=%d, %zu trees, y in {%s}: max |z| = %.2f", o.n, o.replicas,
                  [&] {
                    std::string s;
                    for (double y : o.y_values) s += (s.empty() ? "" : ",") + io::format_double(y);
                    return s;
                  }()
                      .c_str(),
                  worst);
  v.metrics = {{"max_abs_z", worst}};
  rep.verdicts.push_back(v);
  rep.tables.push_back(std::move(tab));
  return rep;
}

// ---------------------------------------------------------------- crossing mass

struct CrossingOptions {
  double y = 2.0;
  int horizon = 300;
  std::size_t replicas = 100000;
  double prune_cap = 10.0;
};

/// E N_[1,H]^y lies in [1 - eps - 3 SE, 1 + 3 SE], eps = mean mass that never
/// crossed (alive at H or pruned). Also reports the exact conservation
/// E[N + alive + pruned] = 1.
inline CheckReport check_crossing_mass(const OffspringLaw& law, const CrossingOptions& o, const RunEnv& env) {
  if (!(o.y >= 0.0)) throw DomainError("crossing check: y must be >= 0");
  engine::EngineConfig cfg;
  cfg.n_max = o.horizon;
  cfg.prune_cap = o.prune_cap;
  cfg.killing = {{-o.y, 0}};
  const double beta = std::log(static_cast<double>(std::max(o.horizon, 2)));
  struct Acc {
    stats::MomentAccumulator N, N_hat, alive, pruned, total;
  };
  const Acc acc = reduce_replicas(
      o.replicas, env.seed, 0x701u, env.workers, [] { return Acc{}; },
      [&](Acc& a, Rng& rng, std::size_t) {
        engine::Generation cur = engine::make_root(cfg);
        engine::Generation next;
        for (int k = 0; k < o.horizon && cur.size() > 0; ++k) {
          engine::evolve_into(cur, next, law, rng, cfg);
          std::swap(cur, next);
        }
        const auto c = engine::crossing_counts(cur.crossing_ledger, 1, o.horizon, o.y, beta);
        const double alive = engine::compute_W(cur);
        a.N.add(c.N);
        a.N_hat.add(c.N_hat);
        a.alive.add(alive);
        a.pruned.add(cur.lost_mass_upper);
        a.total.add(c.N + alive + cur.lost_mass_upper);
      },
      [](Acc& into, const Acc& from) {
        into.N.merge(from.N);
        into.N_hat.merge(from.N_hat);
        into.alive.merge(from.alive);
        into.pruned.merge(from.pruned);
        into.total.merge(from.total);
      });
  const double eps = acc.alive.mean() + acc.pruned.mean();
  const double n = acc.N.mean();
  const double se = acc.N.se();
  const bool in = n >= 1.0 - eps - kZ * se && n <= 1.0 + kZ * se;
  const double z_total = stats::z_score(acc.total.mean(), 1.0, acc.total.se());
  CheckReport rep;
  Verdict v{"crossing_mass", in, "", json::object()};
  v.detail = strf("y=%g, H=%d, %zu trees: N=%.4f(%.4f), eps_trunc=%.4f (alive %.2e, pruned %.4f) -> bracket "
                  "[%.4f, %.4f]; conservation z=%.2f",
                  o.y, o.horizon, o.replicas, n, se, eps, acc.alive.mean(), acc.pruned.mean(), 1.0 - eps - kZ * se,
                  1.0 + kZ * se, z_total);
  v.metrics = {{"N_mean", n},         {"N_se", se},           {"eps_trunc", eps},
               {"alive", acc.alive.mean()}, {"pruned", acc.pruned.mean()}, {"conservation_z", z_total},
               {"N_hat_mean", acc.N_hat.mean()}, {"N_hat_beta", beta}};
  rep.verdicts.push_back(v);
  io::CsvTable tab{"crossing_mass", {"y", "horizon", "N_mean", "N_se", "alive_mean", "pruned_mean", "total_mean",
                                     "total_se", "N_hat_mean", "N_hat_se"}, {}};
  tab.add({o.y, static_cast<std::int64_t>(o.horizon), n, se, acc.alive.mean(), acc.pruned.mean(), acc.total.mean(),
           acc.total.se(), acc.N_hat.mean(), acc.N_hat.se()});
  rep.tables.push_back(std::move(tab));
  return rep;
}

// ---------------------------------------------------------------- stable sampler

struct StableOptions {
  std::size_t samples = 1'000'000;
  std::size_t additivity_samples = 100000;
  double sigma2 = 2.0 * std::numbers::ln2;
  double c0 = 0.0;
};

inline std::vector<double> stable_draws(std::size_t count, double t, const stable::StableParams& p,
                                        std::uint64_t seed, std::uint64_t salt, unsigned workers) {
  return map_replicas(count, seed, salt, workers, [&](Rng& rng, std::size_t) { return stable::sample_at(t, p, rng); });
}

/// Empirical CF within 4/sqrt(N) of exp(-psi) on the 40-point grid for the
/// unit law and the limit triplet; X_2 against X_1 + X_1' by KS.
inline CheckReport check_stable_sampler(const StableOptions& o, const RunEnv& env) {
  const auto grid = stats::symmetric_log_grid();
  const double tol = 4.0 / std::sqrt(static_cast<double>(o.samples));
  const stable::StableParams unit{1.0, 0.0};
  const auto triplet = stable::limit_params(o.sigma2, o.c0).params;
  const auto x_unit = stable_draws(o.samples, 1.0, unit, env.seed, 0x801u, env.workers);
  const auto x_trip = stable_draws(o.samples, 1.0, triplet, env.seed, 0x802u, env.workers);
  const double d_unit = stable::cf_distance(x_unit, grid, unit);
  const double d_trip = stable::cf_distance(x_trip, grid, triplet);
  const auto x2 = stable_draws(o.additivity_samples, 2.0, triplet, env.seed, 0x803u, env.workers);
  const auto a = stable_draws(o.additivity_samples, 1.0, triplet, env.seed, 0x804u, env.workers);
  const auto b = stable_draws(o.additivity_samples, 1.0, triplet, env.seed, 0x805u, env.workers);
  std::vector<double> sum(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) sum[i] = a[i] + b[i];
  const auto ks = stats::ks_two_sample(x2, sum);
  const auto tb = stats::tail_balance(x_unit, 10.0);
  CheckReport rep;
  Verdict v{"stable_sampler", d_unit <= tol && d_trip <= tol && ks.p > 0.01, "", json::object()};
  v.detail = strf("N=%zu: CF sup error %.5f (unit) / %.5f (triplet scale %.4f drift %.4f) vs tol %.5f; additivity "
                  "KS p=%.3f; P(X>10)=%.4f P(X<-10)=%.1e",
                  o.samples, d_unit, d_trip, triplet.scale, triplet.drift, tol, ks.p, tb.right, tb.left);
  v.metrics = {{"cf_error_unit", d_unit}, {"cf_error_triplet", d_trip}, {"tolerance", tol},
               {"ks_stat", ks.stat},       {"ks_p", ks.p},                {"triplet_scale", triplet.scale},
               {"triplet_drift", triplet.drift}};
  rep.verdicts.push_back(v);
  io::CsvTable tab{"stable_cf", {"lambda", "emp_re_unit", "emp_im_unit", "exact_re_unit", "exact_im_unit"}, {}};
  const auto emp = stats::empirical_cf(x_unit, grid);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto ex = stable::characteristic_function(grid[i], unit);
    tab.add({grid[i], emp[i].real(), emp[i].imag(), ex.real(), ex.imag()});
  }
  rep.tables.push_back(std::move(tab));
  return rep;
}

// ---------------------------------------------------------------- fluctuation

struct FluctuationOptions {
  int n = 12;
  std::vector<double> a_list{1.0};
  int horizon = -1;  ///< M; negative means M = n
  std::size_t replicas = 100000;
  double prune_cap = 12.0;
  double beta = std::numeric_limits<double>::quiet_NaN();  ///< NaN: beta_n = log n
  double hill_fraction = 0.01;
  double hill_lo = 0.8;
  double hill_hi = 1.3;
  double tail_q = 10.0;
  std::size_t survival_walks = 1'000'000;  ///< for delta_hat in the variant statistic
  std::vector<double> c0_grid{2, 3, 5, 8, 12, 20, 30, 50, 80, 120, 200, 300, 500};
  std::size_t particle_cap = 10'000'000;
  bool emit_replicas = true;
};

struct FluctuationRow {
  std::vector<double> phi;        ///< c* Phi_n(a) per a
  std::vector<double> phi_delta;  ///< c* times the delta variant
  double w_n = 0.0, d_n = 0.0;
  double d_proxy = 0.0;
  double lost = 0.0;
  std::size_t violations = 0;
  std::size_t counted = 0;
  std::size_t population_evaluated = 0;
  double max_rel_residual = 0.0;
};

/// Simulates c* Phi_n(a) for every a; builds the stable mixture reference
/// from the D proxies; gates on the Hill index of the right tail (bracket
/// [hill_lo, hill_hi]) and on P(X > q) > P(X < -q). The barrier partition
/// is audited on every tree.
inline CheckReport check_fluctuation(const OffspringLaw& law, const renewal::RenewalTable& R,
                                     const FluctuationOptions& o, const RunEnv& env) {
  if (o.a_list.empty()) throw DomainError("fluctuation: empty a list");
  const int M = o.horizon < 0 ? o.n : o.horizon;
  const double c_star = R.constants.c_star;
  const double alpha_star = R.constants.alpha_star;
  if (!std::isfinite(c_star)) throw DomainError("fluctuation: renewal table has no c*");
  const auto schedule = std::isnan(o.beta) ? engine::default_schedule(o.n) : engine::make_schedule(o.n, o.beta);
  engine::EngineConfig cfg;
  cfg.n_max = o.n;
  cfg.prune_cap = o.prune_cap;
  cfg.particle_cap = o.particle_cap;
  int max_entry = 0;
  for (double a : o.a_list) max_entry = std::max(max_entry, engine::ceil_an(a, o.n));
  cfg.horizon = max_entry + M - o.n;
  const int last = cfg.last_generation();
  for (double a : o.a_list) {
    const int e = engine::ceil_an(a, o.n);
    cfg.marked.push_back({schedule, a, e == last ? std::vector<int>{e} : std::vector<int>{e, last}});
  }
  // delta_hat_n from walk survival, theta* calibrated at the largest of {n, 1024}
  const auto surv = walk::survival_prob(law, {o.n, std::max(o.n, 1024)}, o.survival_walks, env.seed, env.workers);
  const double delta_hat = surv.front().delta_n_hat;
  const std::size_t A = o.a_list.size();

  const auto rows = map_replicas(o.replicas, env.seed, 0xb01u, env.workers, [&](Rng& rng, std::size_t) {
    const auto t = engine::run_tree(law, cfg, rng, engine::NoObserver{}, c_star, alpha_star);
    FluctuationRow r;
    // D proxy is D at ceil(a n) + M for each a; with one horizon the last generation serves all
    r.d_proxy = t.D_infty_proxy;
    r.lost = t.lost_mass.back();
    for (std::size_t j = 0; j < A; ++j) {
      r.phi.push_back(c_star * engine::fluctuation_statistic(t, o.n, o.a_list[j], engine::LogCorrection::HalfLogN));
      r.phi_delta.push_back(c_star * engine::fluctuation_statistic(t, o.n, o.a_list[j],
                                                                   engine::LogCorrection::DeltaVariant, law.sigma2(),
                                                                   delta_hat));
    }
    r.w_n = t.W[static_cast<std::size_t>(o.n)];
    r.d_n = t.D[static_cast<std::size_t>(o.n)];
    for (const auto& bp : t.barrier_series) {
      const auto& q = bp.q;
      r.violations += q.violations;
      r.counted += q.count_above + q.count_good + q.count_bad;
      r.population_evaluated += q.count_total;
      const double scale = std::fabs(c_star * q.D) + std::fabs(q.D_barrier) + std::fabs(q.F_good) +
                           std::fabs(q.F_bad) + std::fabs(q.anchor_term) +
                           std::fabs((alpha_star - c_star * schedule.gamma_n) * q.W_tilde) + 1e-300;
      r.max_rel_residual = std::max(r.max_rel_residual, std::fabs(q.reconstruction_residual) / scale);
    }
    return r;
  });

  CheckReport rep;
  // barrier partition audit
  std::size_t violations = 0, counted = 0, population = 0;
  double max_res = 0.0;
  for (const auto& r : rows) {
    violations += r.violations;
    counted += r.counted;
    population += r.population_evaluated;
    max_res = std::max(max_res, r.max_rel_residual);
  }
  {
    Verdict v{"barrier_partition", violations == 0 && counted == population && max_res < 1e-9, "", json::object()};
    v.detail = strf("%zu trees, %zu particle evaluations: violations=%zu, counted=%zu, max relative "
                    "decomposition residual %.1e (gamma_n=%.4f, beta_n=%.4f)",
                    o.replicas, population, violations, counted, max_res, schedule.gamma_n, schedule.beta_n);
    v.metrics = {{"violations", violations}, {"particles", population}, {"max_rel_residual", max_res},
                 {"gamma_n", schedule.gamma_n}, {"beta_n", schedule.beta_n}};
    rep.verdicts.push_back(v);
  }

  // D proxy, c0 and the mixture reference
  std::vector<double> d(rows.size());
  std::size_t negative = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    d[i] = rows[i].d_proxy;
    negative += d[i] < 0.0 ? 1 : 0;
  }
  std::vector<double> d_clamped(d);
  for (double& x : d_clamped) x = std::max(x, 0.0);
  // all-zero D collapses the mixture to a point mass at 0
  const bool degenerate = std::all_of(d_clamped.begin(), d_clamped.end(), [](double x) { return x == 0.0; });
  const auto c0 = stats::estimate_c0(d, o.c0_grid);
  const double c0_used = c0.plateau_found ? c0.c0_hat : 0.0;
  const auto spec = stable::limit_params(law.sigma2(), c0_used);

  io::CsvTable summary{"fluctuation_summary",
                       {"a", "hill", "hill_fraction", "right_tail", "left_tail", "ks_stat", "ks_p", "cf_distance",
                        "median", "mixture_median"},
                       {}};
  io::CsvTable quant{"fluctuation_quantiles", {"a", "p", "statistic", "mixture"}, {}};
  const auto grid = stats::symmetric_log_grid();
  bool all_ok = true;
  std::string detail;
  json per_a = json::array();
  for (std::size_t j = 0; j < A; ++j) {
    std::vector<double> phi(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) phi[i] = rows[i].phi[j];
    Rng mix_rng = replica_stream(env.seed, j, 0xb02u);
    const auto mix = stable::mixture_sample(d_clamped, o.a_list[j], spec.params, mix_rng);
    // too few positive values for a tail fit is reported as NaN and fails the gate
    double hill = std::numeric_limits<double>::quiet_NaN();
    try {
      hill = stats::hill_index(phi, o.hill_fraction);
    } catch (const DomainError&) {
    }
    const auto tb = stats::tail_balance(phi, o.tail_q);
    const auto ks = stats::ks_two_sample(phi, mix);
    const auto emp_s = stats::empirical_cf(phi, grid);
    const auto emp_m = stats::empirical_cf(mix, grid);
    double cfd = 0.0;
    for (std::size_t g = 0; g < grid.size(); ++g) cfd = std::max(cfd, std::abs(emp_s[g] - emp_m[g]));
    std::vector<double> ss(phi), sm(mix);
    std::sort(ss.begin(), ss.end());
    std::sort(sm.begin(), sm.end());
    for (double p : {0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99})
      quant.add({o.a_list[j], p, stats::quantile_sorted(ss, p), stats::quantile_sorted(sm, p)});
    summary.add({o.a_list[j], hill, o.hill_fraction, tb.right, tb.left, ks.stat, ks.p, cfd,
                 stats::quantile_sorted(ss, 0.5), stats::quantile_sorted(sm, 0.5)});
    const bool ok = hill >= o.hill_lo && hill <= o.hill_hi && tb.right > tb.left;
    all_ok = all_ok && ok;
    detail += strf("%sa=%g: Hill=%.3f (top %.3g) in [%.2f, %.2f]? %s; P(>%g)=%.4f vs P(<-%g)=%.4f; KS vs mixture "
                   "D=%.3f",
                   j ? "; " : "", o.a_list[j], hill, o.hill_fraction, o.hill_lo, o.hill_hi,
                   hill >= o.hill_lo && hill <= o.hill_hi ? "yes" : "no", o.tail_q, tb.right, o.tail_q, tb.left,
                   ks.stat);
    per_a.push_back({{"a", o.a_list[j]}, {"hill", hill}, {"right_tail", tb.right}, {"left_tail", tb.left},
                     {"ks_stat", ks.stat}, {"ks_p", ks.p}, {"cf_distance", cfd}});
  }
  Verdict v{"fluctuation_tail", all_ok, "", json::object()};
  v.detail = strf("n=%d, M=%d, %zu trees, c*=%.4f: ", o.n, M, o.replicas, c_star) + detail +
             (degenerate ? "; mixture reference degenerate (all D proxies <= 0)" : "");
  v.metrics = {{"per_a", per_a},
               {"c0_hat", c0.c0_hat},
               {"c0_plateau", c0.plateau_found},
               {"c0_used", c0_used},
               {"negative_D_fraction", static_cast<double>(negative) / static_cast<double>(rows.size())},
               {"degenerate_mixture", degenerate},
               {"delta_hat", delta_hat},
               {"mixture_scale", spec.params.scale},
               {"mixture_drift", spec.params.drift}};
  rep.verdicts.push_back(v);
  rep.tables.push_back(std::move(summary));
  rep.tables.push_back(std::move(quant));
  io::CsvTable c0tab{"c0_curve", {"y", "g", "se", "in_plateau"}, {}};
  for (std::size_t i = 0; i < c0.curve.size(); ++i)
    c0tab.add({c0.curve[i].y, c0.curve[i].g, c0.curve[i].se,
               static_cast<std::int64_t>(c0.plateau_found && i >= c0.window_lo && i <= c0.window_hi)});
  rep.tables.push_back(std::move(c0tab));
  if (o.emit_replicas) {
    io::CsvTable per{"fluctuation_replicas",
                     {"replica", "n", "W_n", "D_n", "statistic", "lost_mass", "a", "D_proxy", "statistic_delta"},
                     {}};
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < A; ++j)
        per.add({static_cast<std::int64_t>(i), static_cast<std::int64_t>(o.n), rows[i].w_n, rows[i].d_n,
                 rows[i].phi[j], rows[i].lost, o.a_list[j], rows[i].d_proxy, rows[i].phi_delta[j]});
    rep.tables.push_back(std::move(per));
  }
  return rep;
}

// ---------------------------------------------------------------- Seneta-Heyde

struct SenetaHeydeOptions {
  std::vector<int> n_grid{8, 12, 16, 20};
  double horizon_factor = 1.0;  ///< M = round(factor * n)
  std::size_t replicas = 1000;
  double prune_cap = 20.0;
  std::size_t particle_cap = 10'000'000;
};

/// Median and order-statistic standard error (half-width of the +-sqrt(N)/2 rank band).
inline std::pair<double, double> median_with_se(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  const double med = stats::quantile_sorted(v, 0.5);
  const double half = 0.5 * std::sqrt(n) / n;
  const double lo = stats::quantile_sorted(v, 0.5 - half);
  const double hi = stats::quantile_sorted(v, 0.5 + half);
  return {med, 0.5 * (hi - lo)};
}

/// sqrt(n) W_n / D_{n+M} moves toward sqrt(2 / (pi sigma^2)) as n grows
/// (distance to the target nonincreasing up to 3 combined SE) and the rank
/// correlation of (sqrt(n) W_n, D_{n+M}) is positive at every n.
inline CheckReport check_seneta_heyde(const OffspringLaw& law, const SenetaHeydeOptions& o, const RunEnv& env) {
  const double target = std::sqrt(2.0 / (std::numbers::pi * law.sigma2()));
  io::CsvTable tab{"seneta_heyde",
                   {"n", "M", "replicas", "median_ratio", "median_se", "spearman", "negative_D_fraction",
                    "mean_lost_mass", "target"},
                   {}};
  io::CsvTable pairs{"seneta_heyde_pairs", {"n", "replica", "sqrt_n_W_n", "D_n_plus_M"}, {}};
  std::vector<double> meds, ses, rhos;
  for (int n : o.n_grid) {
    engine::EngineConfig cfg;
    cfg.n_max = n;
    cfg.horizon = static_cast<int>(std::lround(o.horizon_factor * n));
    cfg.prune_cap = o.prune_cap;
    cfg.particle_cap = o.particle_cap;
    struct P {
      double sw, d, lost;
    };
    const auto ps = map_replicas(o.replicas, env.seed, 0xa00u + static_cast<std::uint64_t>(n), env.workers,
                                 [&](Rng& rng, std::size_t) {
                                   const auto t = engine::run_tree(law, cfg, rng);
                                   return P{std::sqrt(static_cast<double>(n)) * t.W[static_cast<std::size_t>(n)],
                                            t.D_infty_proxy, t.lost_mass.back()};
                                 });
    std::vector<double> sw, d, ratio;
    std::size_t neg = 0;
    double lost = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      sw.push_back(ps[i].sw);
      d.push_back(ps[i].d);
      ratio.push_back(ps[i].sw / ps[i].d);
      neg += ps[i].d < 0.0 ? 1 : 0;
      lost += ps[i].lost;
      pairs.add({static_cast<std::int64_t>(n), static_cast<std::int64_t>(i), ps[i].sw, ps[i].d});
    }
    const auto [med, se] = median_with_se(ratio);
    const double rho = stats::spearman(sw, d);
    meds.push_back(med);
    ses.push_back(se);
    rhos.push_back(rho);
    tab.add({static_cast<std::int64_t>(n), static_cast<std::int64_t>(cfg.horizon),
             static_cast<std::int64_t>(o.replicas), med, se, rho,
             static_cast<double>(neg) / static_cast<double>(ps.size()), lost / static_cast<double>(ps.size()),
             target});
  }
  bool monotone = true;
  for (std::size_t k = 0; k + 1 < meds.size(); ++k)
    if (std::fabs(meds[k + 1] - target) > std::fabs(meds[k] - target) + kZ * stats::combined_se(ses[k], ses[k + 1]))
      monotone = false;
  const bool positive = std::all_of(rhos.begin(), rhos.end(), [](double r) { return r > 0.0; });
  // reported only: rank correlation nondecreasing, slack 3 / sqrt(N - 1) per step
  bool rho_trend = true;
  const double rho_se = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(o.replicas, 2) - 1));
  for (std::size_t k = 0; k + 1 < rhos.size(); ++k)
    if (rhos[k + 1] < rhos[k] - kZ * std::numbers::sqrt2 * rho_se) rho_trend = false;
  std::string traj;
  for (std::size_t k = 0; k < meds.size(); ++k)
    traj += strf("%sn=%d: %.4f(%.4f) rho=%.3f", k ? ", " : "", o.n_grid[k], meds[k], ses[k], rhos[k]);
  CheckReport rep;
  Verdict v{"seneta_heyde", monotone && positive, "", json::object()};
  v.detail = strf("target %.4f; median ratio ", target) + traj +
             strf("; monotone toward target (3-SE slack): %s", monotone ? "yes" : "no");
  v.metrics = {{"target", target}, {"medians", meds}, {"median_se", ses}, {"spearman", rhos}, {"monotone", monotone},
               {"spearman_nondecreasing", rho_trend}};
  rep.verdicts.push_back(v);
  rep.tables.push_back(std::move(tab));
  rep.tables.push_back(std::move(pairs));
  return rep;
}

// ---------------------------------------------------------------- delta_n

struct DeltaOptions {
  std::vector<int> n_grid{64, 256, 1024};
  std::size_t replicas = 10'000'000;
  double max_variation = 0.10;
};

inline CheckReport check_delta_n(const OffspringLaw& law, const DeltaOptions& o, const RunEnv& env) {
  const auto s = walk::survival_prob(law, o.n_grid, o.replicas, env.seed, env.workers);
  io::CsvTable tab{"delta_n", {"n", "p_hat", "se", "sqrt_n_p", "delta_hat"}, {}};
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  bool decreasing = true;
  for (std::size_t i = 0; i < s.size(); ++i) {
    tab.add({static_cast<std::int64_t>(s[i].n), s[i].p_hat, s[i].se, s[i].scaled(), s[i].delta_n_hat});
    lo = std::min(lo, s[i].scaled());
    hi = std::max(hi, s[i].scaled());
    if (i > 0 && s[i].p_hat > s[i - 1].p_hat) decreasing = false;
  }
  const double variation = (hi - lo) / lo;
  CheckReport rep;
  Verdict v{"delta_n", variation < o.max_variation && decreasing, "", json::object()};
  v.detail = strf("%zu walks: sqrt(n) p_hat in [%.5f, %.5f], variation %.2f%% (limit %.0f%%); theta*_hat=%.5f",
                  o.replicas, lo, hi, 100.0 * variation, 100.0 * o.max_variation, s.back().theta_star_hat);
  v.metrics = {{"variation", variation}, {"theta_star_hat", s.back().theta_star_hat}, {"p_decreasing", decreasing}};
  rep.verdicts.push_back(v);
  rep.tables.push_back(std::move(tab));
  return rep;
}

// ---------------------------------------------------------------- spine

struct SpineOptions {
  std::vector<int> n_values{1, 4, 8};
  std::size_t samples = 100000;
};

/// Spine positions under Q against the step-law walk (KS p > 0.01 at each n).
inline CheckReport check_spine(const OffspringLaw& law, const SpineOptions& o, const RunEnv& env) {
  io::CsvTable tab{"spine_ks", {"n", "ks_stat", "ks_p"}, {}};
  bool ok = true;
  std::string detail;
  for (int n : o.n_values) {
    const auto sp = map_replicas(o.samples, env.seed, 0xc00u + static_cast<std::uint64_t>(n), env.workers,
                                 [&](Rng& rng, std::size_t) { return spine::sample_spine_Q(law, n, rng).positions.back(); });
    const auto wk = map_replicas(o.samples, env.seed, 0xd00u + static_cast<std::uint64_t>(n), env.workers,
                                 [&](Rng& rng, std::size_t) { return walk::simulate_path(law, n, 0.0, rng).values.back(); });
    const auto ks = stats::ks_two_sample(sp, wk);
    tab.add({static_cast<std::int64_t>(n), ks.stat, ks.p});
    ok = ok && ks.p > 0.01;
    detail += strf("%sn=%d p=%.3f", detail.empty() ? "" : ", ", n, ks.p);
  }
  CheckReport rep;
  Verdict v{"spine_walk_law", ok, "KS spine vs walk: " + detail, json::object()};
  rep.verdicts.push_back(v);
  rep.tables.push_back(std::move(tab));
  return rep;
}

}  // namespace brw::checks
