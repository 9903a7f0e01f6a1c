// brwlab: command-line front end for the branching random walk experiments.
//
// Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
// 3 particle budget exceeded.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "brw/errors.hpp"
#include "brw/experiments.hpp"

namespace {

using brw::experiments::Experiment;

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitConfig = 2;
constexpr int kExitBudget = 3;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::string out;
};

int execute(Experiment which, const Flags& f) {
  namespace ex = brw::experiments;
  ex::ExperimentConfig cfg;
  if (!f.config.empty()) {
    cfg = ex::load_config(f.config);
    if (cfg.experiment != which)
      throw brw::ConfigError("experiment", "config selects \"" + std::string(ex::experiment_name(cfg.experiment)) +
                                               "\" but the subcommand runs \"" +
                                               std::string(ex::experiment_name(which)) + "\"");
  } else {
    cfg.experiment = which;
  }
  if (f.seed) {
    cfg.overrides["seed"] = {{"flag", "--seed"}, {"value", *f.seed}, {"replaced", cfg.seed}};
    cfg.seed = *f.seed;
  }
  if (f.workers) {
    cfg.overrides["workers"] = {{"flag", "--workers"}, {"value", *f.workers}, {"replaced", cfg.workers}};
    cfg.workers = *f.workers;
  }
  if (!f.out.empty()) {
    cfg.overrides["output_dir"] = {{"flag", "--out"}, {"value", f.out}, {"replaced", cfg.output_dir}};
    cfg.output_dir = f.out;
  }
  const auto res = ex::run(cfg);
  for (const auto& v : res.verdicts)
    std::printf("%s %s: %s\n", v.passed ? "PASS" : "FAIL", v.id.c_str(), v.detail.c_str());
  std::printf("wrote %zu CSV artifacts and report.json to %s (%.1f s)\n", res.artifacts.size(),
              res.output_dir.string().c_str(), res.wall_seconds);
  return res.all_passed() ? kExitPass : kExitFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo experiments for branching random walks"};
  app.require_subcommand(1);
  Flags flags;
  const std::map<std::string, std::pair<Experiment, std::string>> commands{
      {"verify", {Experiment::VerifyIdentities, "Run every identity and acceptance check"}},
      {"renewal", {Experiment::RenewalBuild, "Estimate the renewal function and its constants"}},
      {"fluctuation", {Experiment::Fluctuation, "Simulate the fluctuation statistic and its stable reference"}},
      {"seneta-heyde", {Experiment::SenetaHeyde, "Track sqrt(n) W_n against the derivative martingale"}},
      {"stable-check", {Experiment::StableCheck, "Validate the 1-stable sampler"}},
      {"delta-n", {Experiment::DeltaNReport, "Estimate walk survival probabilities and delta_n"}},
  };
  std::optional<Experiment> chosen;
  for (const auto& [name, spec] : commands) {
    auto* sub = app.add_subcommand(name, spec.second);
    sub->add_option("--config", flags.config, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "Master seed (overrides the config)");
    sub->add_option("--workers", flags.workers, "Worker threads (0 = hardware)");
    sub->add_option("--out", flags.out, "Output directory (overrides the config)");
    const Experiment e = spec.first;
    sub->callback([&chosen, e] { chosen = e; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }
  try {
    return execute(*chosen, flags);
  } catch (const brw::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const brw::BudgetExceeded& e) {
    std::fprintf(stderr, "budget exceeded: %s\n", e.what());
    return kExitBudget;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFail;
  }
}
