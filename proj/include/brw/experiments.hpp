#pragma once

// Experiment configuration (strict JSON), dispatch and artifact persistence.
//
// Every CSV goes to <output_dir>/<name>.csv with a <name>.meta.json sidecar
// echoing the full configuration. Wall-clock time appears only in
// report.json, so CSV bytes depend on nothing but (config, seed).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "brw/checks.hpp"
#include "brw/errors.hpp"
#include "brw/io.hpp"
#include "brw/model.hpp"
#include "brw/renewal.hpp"

namespace brw::experiments {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kOutputEnv = "BRWLAB_OUT";

enum class Experiment { VerifyIdentities, RenewalBuild, Fluctuation, StableCheck, SenetaHeyde, DeltaNReport };

inline std::string_view experiment_name(Experiment e) noexcept {
  switch (e) {
    case Experiment::VerifyIdentities: return "verify_identities";
    case Experiment::RenewalBuild: return "renewal_build";
    case Experiment::Fluctuation: return "fluctuation";
    case Experiment::StableCheck: return "stable_check";
    case Experiment::SenetaHeyde: return "seneta_heyde";
    case Experiment::DeltaNReport: return "delta_n_report";
  }
  return "unknown";
}

inline std::optional<Experiment> parse_experiment(std::string_view s) noexcept {
  for (auto e : {Experiment::VerifyIdentities, Experiment::RenewalBuild, Experiment::Fluctuation,
                 Experiment::StableCheck, Experiment::SenetaHeyde, Experiment::DeltaNReport})
    if (experiment_name(e) == s) return e;
  return std::nullopt;
}

struct LawSpec {
  Family family = Family::DyadicGaussian;
  double m = 2.0;  ///< Poisson offspring mean; ignored for the dyadic family

  OffspringLaw build() const {
    return family == Family::PoissonGaussian ? OffspringLaw::make_poisson_gaussian(m)
                                             : OffspringLaw::make_dyadic_gaussian();
  }
};

/// Defaults reproduce the acceptance budgets.
struct Budgets {
  // fluctuation
  std::size_t replicas = 100000;
  int n_max = 12;
  int horizon = -1;  ///< M; -1 means M = n
  double prune_cap = 12.0;
  std::size_t particle_cap = 10'000'000;
  // renewal
  std::size_t renewal_replicas = 1'000'000;
  std::size_t harmonic_replicas = 1'000'000;
  double step_cap = walk::kDefaultStepCap;
  std::string renewal_method = "ladder";
  std::string renewal_table;  ///< CSV to load instead of building; empty builds
  // walks and the stable law
  std::size_t walk_replicas = 10'000'000;
  std::size_t survival_replicas = 1'000'000;  ///< delta_hat inside the fluctuation run
  std::size_t stable_samples = 1'000'000;
  std::size_t additivity_samples = 100000;
  // identity checks
  std::size_t means_replicas = 200000;
  int means_n_max = 14;
  double means_prune_cap = 16.0;
  std::size_t m2o_replicas = 1'000'000;
  int m2o_n = 10;
  std::size_t truncated_replicas = 100000;
  int truncated_n = 10;
  std::size_t crossing_replicas = 100000;
  int crossing_horizon = 300;
  double crossing_y = 2.0;
  double crossing_prune_cap = 10.0;
  std::size_t spine_samples = 100000;
  // Seneta-Heyde
  std::size_t sh_replicas = 1000;
  double sh_prune_cap = 20.0;
  double sh_horizon_factor = 1.0;
};

struct BarrierSpec {
  std::vector<double> a{1.0};
  std::optional<double> beta;  ///< empty: beta_n = log n
};

struct Grids {
  std::vector<int> sh_n{8, 12, 16, 20};
  std::vector<int> walk_n{64, 256, 1024};
  std::vector<double> renewal_y = renewal::default_grid();
  std::vector<double> truncated_y{0.0, 1.0, 2.0, 5.0};
  std::vector<double> m2o_t{-1.0, 0.0, 1.0, 2.0};
  std::vector<double> c0_y{2, 3, 5, 8, 12, 20, 30, 50, 80, 120, 200, 300, 500};
};

struct FluctuationGates {
  double hill_fraction = 0.01;
  double hill_lo = 0.8;
  double hill_hi = 1.3;
  double tail_q = 10.0;
};

struct ExperimentConfig {
  Experiment experiment = Experiment::VerifyIdentities;
  LawSpec law;
  std::uint64_t seed = 20240601;
  unsigned workers = 1;
  std::string output_dir = "brwlab_out";
  Budgets budgets;
  BarrierSpec barrier;
  Grids grids;
  FluctuationGates gates;
  /// Overrides applied after parsing (CLI flags, environment), echoed in metadata.
  json overrides = json::object();
};

// ---------------------------------------------------------------- parsing

namespace detail {

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const std::string& key) const { return j_.at(key); }
  std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    out = convert<T>(j_.at(key), sub(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      (void)v;
      if (!seen_.count(k)) throw ConfigError(sub(k), "unknown key");
    }
  }

  template <class T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path, "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path, "expected a number");
      const double x = v.get<double>();
      if (!std::isfinite(x)) throw ConfigError(path, "expected a finite number");
      return x;
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned()) return static_cast<T>(v.get<std::uint64_t>());
        if (v.get<std::int64_t>() < 0) throw ConfigError(path, "expected a nonnegative integer");
        return static_cast<T>(v.get<std::int64_t>());
      } else {
        if (v.is_number_unsigned() && v.get<std::uint64_t>() > static_cast<std::uint64_t>(
                                                                 std::numeric_limits<T>::max()))
          throw ConfigError(path, "integer out of range");
        const auto x = v.get<std::int64_t>();
        if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max())
          throw ConfigError(path, "integer out of range");
        return static_cast<T>(x);
      }
    } else {
      // std::vector<U>
      using U = typename T::value_type;
      if (!v.is_array()) throw ConfigError(path, "expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert<U>(v[i], path + "[" + std::to_string(i) + "]"));
      return out;
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

/// Prune caps accept a number or null (no pruning).
inline void get_cap(Reader& r, const std::string& key, double& out) {
  if (!r.has(key)) return;
  const auto& v = r.at(key);
  if (v.is_null()) {
    out = std::numeric_limits<double>::infinity();
    return;
  }
  out = Reader::convert<double>(v, r.sub(key));
  if (!(out > 0.0)) throw ConfigError(r.sub(key), "must be > 0 or null");
}

inline void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigError(path, what);
}

}  // namespace detail

/// Range checks on a parsed or programmatically built config.
inline void validate(const ExperimentConfig& c) {
  using detail::require;
  const auto& b = c.budgets;
  require(c.law.family != Family::PoissonGaussian || (c.law.m > 1.0 && std::isfinite(c.law.m)), "law.m",
          "Poisson offspring mean must exceed 1");
  require(!c.output_dir.empty(), "output_dir", "must be nonempty");
  require(b.replicas >= 2, "budgets.replicas", "must be >= 2");
  require(b.n_max >= 1, "budgets.n_max", "must be >= 1");
  require(b.horizon >= -1, "budgets.horizon", "must be >= 0 (or -1 for M = n)");
  require(b.particle_cap > 0, "budgets.particle_cap", "must be > 0");
  require(b.renewal_replicas >= 2, "budgets.renewal_replicas", "must be >= 2");
  require(b.harmonic_replicas >= 2, "budgets.harmonic_replicas", "must be >= 2");
  require(b.step_cap >= 1.0, "budgets.step_cap", "must be >= 1");
  require(b.renewal_method == "ladder" || b.renewal_method == "occupation", "budgets.renewal_method",
          "must be \"ladder\" or \"occupation\"");
  require(b.walk_replicas >= 2, "budgets.walk_replicas", "must be >= 2");
  require(b.survival_replicas >= 2, "budgets.survival_replicas", "must be >= 2");
  require(b.stable_samples >= 2, "budgets.stable_samples", "must be >= 2");
  require(b.additivity_samples >= 2, "budgets.additivity_samples", "must be >= 2");
  require(b.means_replicas >= 2, "budgets.means_replicas", "must be >= 2");
  require(b.means_n_max >= 0, "budgets.means_n_max", "must be >= 0");
  require(b.m2o_replicas >= 2, "budgets.m2o_replicas", "must be >= 2");
  require(b.m2o_n >= 0, "budgets.m2o_n", "must be >= 0");
  require(b.truncated_replicas >= 2, "budgets.truncated_replicas", "must be >= 2");
  require(b.truncated_n >= 0, "budgets.truncated_n", "must be >= 0");
  require(b.crossing_replicas >= 2, "budgets.crossing_replicas", "must be >= 2");
  require(b.crossing_horizon >= 1, "budgets.crossing_horizon", "must be >= 1");
  require(b.crossing_y >= 0.0, "budgets.crossing_y", "must be >= 0");
  require(b.spine_samples >= 2, "budgets.spine_samples", "must be >= 2");
  require(b.sh_replicas >= 2, "budgets.sh_replicas", "must be >= 2");
  require(b.sh_horizon_factor >= 0.0, "budgets.sh_horizon_factor", "must be >= 0");
  require(!c.barrier.a.empty(), "barrier.a", "must be nonempty");
  for (std::size_t i = 0; i < c.barrier.a.size(); ++i)
    require(c.barrier.a[i] >= 1.0, "barrier.a[" + std::to_string(i) + "]", "must be >= 1");
  require(!c.barrier.beta || *c.barrier.beta >= 0.0, "barrier.beta", "must be >= 0");
  require(!c.grids.sh_n.empty(), "grids.sh_n", "must be nonempty");
  for (std::size_t i = 0; i < c.grids.sh_n.size(); ++i)
    require(c.grids.sh_n[i] >= 1, "grids.sh_n[" + std::to_string(i) + "]", "must be >= 1");
  require(!c.grids.walk_n.empty(), "grids.walk_n", "must be nonempty");
  for (std::size_t i = 0; i < c.grids.walk_n.size(); ++i)
    require(c.grids.walk_n[i] >= 1, "grids.walk_n[" + std::to_string(i) + "]", "must be >= 1");
  require(c.grids.renewal_y.size() >= 2 && c.grids.renewal_y.front() == 0.0, "grids.renewal_y",
          "must start at 0 and hold at least two points");
  for (std::size_t i = 1; i < c.grids.renewal_y.size(); ++i)
    require(c.grids.renewal_y[i] > c.grids.renewal_y[i - 1], "grids.renewal_y", "must be strictly increasing");
  for (std::size_t i = 0; i < c.grids.truncated_y.size(); ++i)
    require(c.grids.truncated_y[i] >= 0.0, "grids.truncated_y[" + std::to_string(i) + "]", "must be >= 0");
  for (std::size_t i = 0; i < c.grids.c0_y.size(); ++i)
    require(c.grids.c0_y[i] > 1.0 && (i == 0 || c.grids.c0_y[i] > c.grids.c0_y[i - 1]), "grids.c0_y",
            "must be increasing and > 1");
  require(c.gates.hill_fraction > 0.0 && c.gates.hill_fraction < 1.0, "gates.hill_fraction", "must lie in (0, 1)");
  require(c.gates.hill_lo < c.gates.hill_hi, "gates.hill_lo", "must be below gates.hill_hi");
  require(c.gates.tail_q > 0.0, "gates.tail_q", "must be > 0");
}

inline ExperimentConfig parse_config(const json& root) {
  using detail::Reader;
  ExperimentConfig c;
  Reader r(root, "");
  if (!r.has("experiment")) throw ConfigError("experiment", "missing required key");
  {
    const auto name = Reader::convert<std::string>(r.at("experiment"), "experiment");
    const auto e = parse_experiment(name);
    if (!e) throw ConfigError("experiment", "unknown experiment \"" + name + "\"");
    c.experiment = *e;
  }
  if (r.has("law")) {
    Reader l(r.at("law"), "law");
    if (l.has("family")) {
      const auto name = Reader::convert<std::string>(l.at("family"), "law.family");
      const auto f = parse_family(name);
      if (!f) throw ConfigError("law.family", "unknown family \"" + name + "\"");
      c.law.family = *f;
    }
    l.get("m", c.law.m);
    l.finish();
  }
  r.get("seed", c.seed);
  r.get("workers", c.workers);
  r.get("output_dir", c.output_dir);
  if (r.has("budgets")) {
    Reader b(r.at("budgets"), "budgets");
    auto& B = c.budgets;
    b.get("replicas", B.replicas);
    b.get("n_max", B.n_max);
    b.get("horizon", B.horizon);
    detail::get_cap(b, "prune_cap", B.prune_cap);
    b.get("particle_cap", B.particle_cap);
    b.get("renewal_replicas", B.renewal_replicas);
    b.get("harmonic_replicas", B.harmonic_replicas);
    b.get("step_cap", B.step_cap);
    b.get("renewal_method", B.renewal_method);
    b.get("renewal_table", B.renewal_table);
    b.get("walk_replicas", B.walk_replicas);
    b.get("survival_replicas", B.survival_replicas);
    b.get("stable_samples", B.stable_samples);
    b.get("additivity_samples", B.additivity_samples);
    b.get("means_replicas", B.means_replicas);
    b.get("means_n_max", B.means_n_max);
    detail::get_cap(b, "means_prune_cap", B.means_prune_cap);
    b.get("m2o_replicas", B.m2o_replicas);
    b.get("m2o_n", B.m2o_n);
    b.get("truncated_replicas", B.truncated_replicas);
    b.get("truncated_n", B.truncated_n);
    b.get("crossing_replicas", B.crossing_replicas);
    b.get("crossing_horizon", B.crossing_horizon);
    b.get("crossing_y", B.crossing_y);
    detail::get_cap(b, "crossing_prune_cap", B.crossing_prune_cap);
    b.get("spine_samples", B.spine_samples);
    b.get("sh_replicas", B.sh_replicas);
    detail::get_cap(b, "sh_prune_cap", B.sh_prune_cap);
    b.get("sh_horizon_factor", B.sh_horizon_factor);
    b.finish();
  }
  if (r.has("barrier")) {
    Reader b(r.at("barrier"), "barrier");
    b.get("a", c.barrier.a);
    if (b.has("beta")) {
      const auto& v = b.at("beta");
      if (v.is_string()) {
        if (v.get<std::string>() != "log_n") throw ConfigError("barrier.beta", "expected \"log_n\" or a number");
        c.barrier.beta.reset();
      } else {
        c.barrier.beta = Reader::convert<double>(v, "barrier.beta");
      }
    }
    b.finish();
  }
  if (r.has("grids")) {
    Reader g(r.at("grids"), "grids");
    g.get("sh_n", c.grids.sh_n);
    g.get("walk_n", c.grids.walk_n);
    g.get("renewal_y", c.grids.renewal_y);
    g.get("truncated_y", c.grids.truncated_y);
    g.get("m2o_t", c.grids.m2o_t);
    g.get("c0_y", c.grids.c0_y);
    g.finish();
  }
  if (r.has("gates")) {
    Reader g(r.at("gates"), "gates");
    g.get("hill_fraction", c.gates.hill_fraction);
    g.get("hill_lo", c.gates.hill_lo);
    g.get("hill_hi", c.gates.hill_hi);
    g.get("tail_q", c.gates.tail_q);
    g.finish();
  }
  r.finish();
  validate(c);
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("malformed JSON: ") + e.what());
  }
  return parse_config(root);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("<file>", e.what());
  }
  return parse_config_text(text);
}

inline json cap_json(double cap) { return std::isfinite(cap) ? json(cap) : json(nullptr); }

/// Canonical echo of every field (defaults included).
inline json to_json(const ExperimentConfig& c) {
  const auto& B = c.budgets;
  json j;
  j["experiment"] = experiment_name(c.experiment);
  j["law"] = {{"family", family_name(c.law.family)}, {"m", c.law.m}};
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["output_dir"] = c.output_dir;
  j["budgets"] = {{"replicas", B.replicas},
                  {"n_max", B.n_max},
                  {"horizon", B.horizon},
                  {"prune_cap", cap_json(B.prune_cap)},
                  {"particle_cap", B.particle_cap},
                  {"renewal_replicas", B.renewal_replicas},
                  {"harmonic_replicas", B.harmonic_replicas},
                  {"step_cap", B.step_cap},
                  {"renewal_method", B.renewal_method},
                  {"renewal_table", B.renewal_table},
                  {"walk_replicas", B.walk_replicas},
                  {"survival_replicas", B.survival_replicas},
                  {"stable_samples", B.stable_samples},
                  {"additivity_samples", B.additivity_samples},
                  {"means_replicas", B.means_replicas},
                  {"means_n_max", B.means_n_max},
                  {"means_prune_cap", cap_json(B.means_prune_cap)},
                  {"m2o_replicas", B.m2o_replicas},
                  {"m2o_n", B.m2o_n},
                  {"truncated_replicas", B.truncated_replicas},
                  {"truncated_n", B.truncated_n},
                  {"crossing_replicas", B.crossing_replicas},
                  {"crossing_horizon", B.crossing_horizon},
                  {"crossing_y", B.crossing_y},
                  {"crossing_prune_cap", cap_json(B.crossing_prune_cap)},
                  {"spine_samples", B.spine_samples},
                  {"sh_replicas", B.sh_replicas},
                  {"sh_prune_cap", cap_json(B.sh_prune_cap)},
                  {"sh_horizon_factor", B.sh_horizon_factor}};
  j["barrier"] = {{"a", c.barrier.a}, {"beta", c.barrier.beta ? json(*c.barrier.beta) : json("log_n")}};
  j["grids"] = {{"sh_n", c.grids.sh_n},
                {"walk_n", c.grids.walk_n},
                {"renewal_y", c.grids.renewal_y},
                {"truncated_y", c.grids.truncated_y},
                {"m2o_t", c.grids.m2o_t},
                {"c0_y", c.grids.c0_y}};
  j["gates"] = {{"hill_fraction", c.gates.hill_fraction},
                {"hill_lo", c.gates.hill_lo},
                {"hill_hi", c.gates.hill_hi},
                {"tail_q", c.gates.tail_q}};
  return j;
}

// ---------------------------------------------------------------- running

struct RunResult {
  Experiment experiment = Experiment::VerifyIdentities;
  std::vector<checks::Verdict> verdicts;
  std::vector<std::string> artifacts;  ///< CSV paths
  std::filesystem::path output_dir;
  json metadata;
  double wall_seconds = 0.0;

  bool all_passed() const {
    return std::all_of(verdicts.begin(), verdicts.end(), [](const auto& v) { return v.passed; });
  }
  const checks::Verdict* find(std::string_view id) const {
    for (const auto& v : verdicts)
      if (v.id == id) return &v;
    return nullptr;
  }
};

/// Reads a table written as (y, R_hat, se, method).
inline renewal::RenewalTable load_renewal_csv(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "y,R_hat,se,method")
    throw ConfigError("budgets.renewal_table", "unexpected header in " + path.string());
  std::vector<double> y, r, se;
  renewal::Method method = renewal::Method::Synthetic;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string f[4];
    for (auto& s : f)
      if (!std::getline(ls, s, ',')) throw ConfigError("budgets.renewal_table", "short row in " + path.string());
    try {
      y.push_back(std::stod(f[0]));
      r.push_back(std::stod(f[1]));
      se.push_back(std::stod(f[2]));
    } catch (const std::exception&) {
      throw ConfigError("budgets.renewal_table", "non-numeric cell in " + path.string());
    }
    for (auto m : {renewal::Method::LadderExpectation, renewal::Method::Occupation, renewal::Method::Synthetic})
      if (f[3] == renewal::method_name(m)) method = m;
  }
  return renewal::make_table(y, r, se, method);
}

namespace detail {

inline checks::RenewalOptions renewal_options(const ExperimentConfig& c) {
  checks::RenewalOptions o;
  o.grid = c.grids.renewal_y;
  o.replicas = c.budgets.renewal_replicas;
  o.harmonic_replicas = c.budgets.harmonic_replicas;
  o.step_cap = static_cast<std::uint64_t>(c.budgets.step_cap);
  return o;
}

/// Table used by the fluctuation statistic: loaded, or built with one method.
inline renewal::RenewalTable fluctuation_table(const OffspringLaw& law, const ExperimentConfig& c,
                                               const checks::RunEnv& env) {
  if (!c.budgets.renewal_table.empty()) return load_renewal_csv(c.budgets.renewal_table);
  renewal::EstimateOptions eo;
  eo.step_cap = static_cast<std::uint64_t>(c.budgets.step_cap);
  eo.workers = env.workers;
  const auto m = c.budgets.renewal_method == "occupation" ? renewal::Method::Occupation
                                                            : renewal::Method::LadderExpectation;
  return renewal::estimate_R(law, c.grids.renewal_y, c.budgets.renewal_replicas, m, env.seed, eo);
}

inline checks::FluctuationOptions fluctuation_options(const ExperimentConfig& c) {
  checks::FluctuationOptions o;
  o.n = c.budgets.n_max;
  o.a_list = c.barrier.a;
  o.horizon = c.budgets.horizon;
  o.replicas = c.budgets.replicas;
  o.prune_cap = c.budgets.prune_cap;
  o.particle_cap = c.budgets.particle_cap;
  o.beta = c.barrier.beta ? *c.barrier.beta : std::numeric_limits<double>::quiet_NaN();
  o.hill_fraction = c.gates.hill_fraction;
  o.hill_lo = c.gates.hill_lo;
  o.hill_hi = c.gates.hill_hi;
  o.tail_q = c.gates.tail_q;
  o.survival_walks = c.budgets.survival_replicas;
  o.c0_grid = c.grids.c0_y;
  return o;
}

inline checks::SenetaHeydeOptions seneta_heyde_options(const ExperimentConfig& c) {
  checks::SenetaHeydeOptions o;
  o.n_grid = c.grids.sh_n;
  o.horizon_factor = c.budgets.sh_horizon_factor;
  o.replicas = c.budgets.sh_replicas;
  o.prune_cap = c.budgets.sh_prune_cap;
  o.particle_cap = c.budgets.particle_cap;
  return o;
}

inline checks::StableOptions stable_options(const ExperimentConfig& c, const OffspringLaw& law) {
  checks::StableOptions o;
  o.samples = c.budgets.stable_samples;
  o.additivity_samples = c.budgets.additivity_samples;
  o.sigma2 = law.sigma2();
  return o;
}

inline checks::DeltaOptions delta_options(const ExperimentConfig& c) {
  checks::DeltaOptions o;
  o.n_grid = c.grids.walk_n;
  o.replicas = c.budgets.walk_replicas;
  return o;
}

inline json law_json(const OffspringLaw& law, const LawSpec& spec) {
  return {{"family", family_name(spec.family)},
          {"m", spec.m},
          {"offspring_mean", law.offspring_mean()},
          {"displacement_mean", law.displacement_mean()},
          {"displacement_variance", law.displacement_variance()},
          {"sigma2", law.sigma2()}};
}

/// A small fluctuation run at one worker and at two or more; every CSV must
/// render to identical bytes.
inline checks::CheckReport determinism_probe(const OffspringLaw& law, const renewal::RenewalTable& table,
                                             const checks::RunEnv& env) {
  checks::FluctuationOptions o;
  o.n = 6;
  o.replicas = 3000;
  o.survival_walks = 20000;
  o.hill_fraction = 0.05;
  const unsigned many = std::max(2u, env.workers);
  const auto a = checks::check_fluctuation(law, table, o, {env.seed, 1});
  const auto b = checks::check_fluctuation(law, table, o, {env.seed, many});
  bool same = a.tables.size() == b.tables.size();
  std::size_t bytes = 0;
  for (std::size_t i = 0; same && i < a.tables.size(); ++i) {
    const auto ra = a.tables[i].render();
    same = ra == b.tables[i].render();
    bytes += ra.size();
  }
  checks::CheckReport rep;
  checks::Verdict v{"determinism", same, "", checks::json::object()};
  v.detail = io::strf("%zu CSV tables (%zu bytes) at 1 vs %u workers: %s", a.tables.size(), bytes, many,
                      same ? "byte-identical" : "DIFFER");
  v.metrics = {{"tables", a.tables.size()}, {"bytes", bytes}, {"workers_compared", many}};
  rep.verdicts.push_back(v);
  return rep;
}

/// All acceptance checks in one pass, for verify_identities.
inline checks::CheckReport run_identities(const OffspringLaw& law, const ExperimentConfig& c,
                                          const checks::RunEnv& env) {
  const auto& B = c.budgets;
  checks::CheckReport rep;
  rep.append(checks::check_normalization(law));
  rep.append(checks::check_martingale_means(law, {B.means_n_max, B.means_replicas, B.means_prune_cap, B.particle_cap},
                                            env));
  rep.append(checks::check_many_to_one(law, {B.m2o_n, c.grids.m2o_t, B.m2o_replicas}, env));
  rep.append(checks::check_spine(law, {{1, 4, 8}, B.spine_samples}, env));
  const auto ro = renewal_options(c);
  const auto bundle = checks::build_renewal(law, ro, env);
  rep.append(checks::check_renewal_dual(bundle, ro));
  rep.append(checks::check_c_star(bundle.ladder));
  rep.append(checks::check_harmonicity(bundle.ladder, law, ro, env));
  rep.append(checks::check_truncated_martingale(
      law, bundle.ladder, {B.truncated_n, c.grids.truncated_y, B.truncated_replicas, engine::kInf}, env));
  rep.append(checks::check_crossing_mass(law, {B.crossing_y, B.crossing_horizon, B.crossing_replicas,
                                               B.crossing_prune_cap},
                                         env));
  rep.append(checks::check_stable_sampler(stable_options(c, law), env));
  rep.append(checks::check_fluctuation(law, bundle.ladder, fluctuation_options(c), env));
  rep.append(determinism_probe(law, bundle.ladder, env));
  rep.append(checks::check_seneta_heyde(law, seneta_heyde_options(c), env));
  rep.append(checks::check_delta_n(law, delta_options(c), env));
  return rep;
}

}  // namespace detail

/// Writes tables and sidecars; returns CSV paths.
inline std::vector<std::string> persist(const std::vector<io::CsvTable>& tables, const std::filesystem::path& dir,
                                        const json& meta) {
  std::vector<std::string> paths;
  for (const auto& t : tables) {
    const auto csv = dir / (t.name + ".csv");
    io::write_file(csv, t.render());
    json side = meta;
    side["artifact"] = t.name + ".csv";
    side["columns"] = t.columns;
    side["rows"] = t.rows.size();
    io::write_file(dir / (t.name + ".meta.json"), side.dump(2) + "\n");
    paths.push_back(csv.string());
  }
  return paths;
}

inline json verdict_json(const checks::Verdict& v) {
  return {{"id", v.id}, {"passed", v.passed}, {"detail", v.detail}, {"metrics", json::parse(v.metrics.dump())}};
}

/// Runs the configured experiment. Engine errors (BudgetExceeded, DomainError)
/// propagate; the caller maps them to exit codes.
inline RunResult run(ExperimentConfig c) {
  // environment override of the output directory, echoed
  if (const char* env_out = std::getenv(kOutputEnv); env_out && *env_out) {
    c.overrides["output_dir_env"] = {{"variable", kOutputEnv}, {"value", env_out}, {"replaced", c.output_dir}};
    c.output_dir = env_out;
  }
  validate(c);
  const auto t0 = std::chrono::steady_clock::now();
  const OffspringLaw law = c.law.build();
  const checks::RunEnv env{c.seed, c.workers};

  checks::CheckReport rep;
  json extra = json::object();
  switch (c.experiment) {
    case Experiment::VerifyIdentities:
      rep = detail::run_identities(law, c, env);
      break;
    case Experiment::RenewalBuild: {
      const auto ro = detail::renewal_options(c);
      const auto bundle = checks::build_renewal(law, ro, env);
      rep.append(checks::check_renewal_dual(bundle, ro));
      rep.append(checks::check_c_star(bundle.ladder));
      rep.append(checks::check_harmonicity(bundle.ladder, law, ro, env));
      extra["constants_ladder"] = json::parse(checks::renewal_constants_json(bundle.ladder).dump());
      extra["constants_occupation"] = json::parse(checks::renewal_constants_json(bundle.occupation).dump());
      break;
    }
    case Experiment::Fluctuation: {
      const auto table = detail::fluctuation_table(law, c, env);
      extra["renewal_constants"] = json::parse(checks::renewal_constants_json(table).dump());
      rep.tables.push_back(checks::renewal_csv(table, "renewal_table"));
      rep.append(checks::check_fluctuation(law, table, detail::fluctuation_options(c), env));
      break;
    }
    case Experiment::StableCheck:
      rep = checks::check_stable_sampler(detail::stable_options(c, law), env);
      break;
    case Experiment::SenetaHeyde:
      rep = checks::check_seneta_heyde(law, detail::seneta_heyde_options(c), env);
      break;
    case Experiment::DeltaNReport:
      rep = checks::check_delta_n(law, detail::delta_options(c), env);
      break;
  }

  RunResult res;
  res.experiment = c.experiment;
  res.output_dir = c.output_dir;
  res.metadata = {{"schema_version", kSchemaVersion},
                  {"experiment", experiment_name(c.experiment)},
                  {"config", to_json(c)},
                  {"law", detail::law_json(law, c.law)},
                  {"rng", {{"generator", "xoshiro256++"},
                           {"stream", "replica_stream(seed, replica, salt), blocks of 256"},
                           {"seed", c.seed}}},
                  {"overrides", c.overrides}};
  if (!extra.empty()) res.metadata["extra"] = extra;
  res.artifacts = persist(rep.tables, res.output_dir, res.metadata);
  res.verdicts = std::move(rep.verdicts);
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json report = res.metadata;
  report["all_passed"] = res.all_passed();
  report["verdicts"] = json::array();
  for (const auto& v : res.verdicts) report["verdicts"].push_back(verdict_json(v));
  report["artifacts"] = res.artifacts;
  report["wall_seconds"] = res.wall_seconds;
  io::write_file(res.output_dir / "report.json", report.dump(2) + "\n");
  return res;
}

}  // namespace brw::experiments
