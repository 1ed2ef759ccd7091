// Command-line driver for the synthetic adversarial reward-model laboratory.
// Every subcommand operates on a run directory (--out) that holds a manifest,
// so pipelines can be executed stage by stage or all at once and resumed
// after interruption.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "advrm/report.hpp"
#include "advrm/stages.hpp"

namespace {

std::string default_out() {
  if (const char* env = std::getenv("ADVRM_OUT_ROOT")) return env;
  return "run";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale laboratory for adversarial reward-model training"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  std::string out = default_out();
  app.add_option("--config", config_path, "JSON config file (defaults baked in)")
      ->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "Config override key.path=value (repeatable)");
  CLI::Option* seed_opt = app.add_option("--seed", seed, "Master seed (default: first config seed)");
  app.add_option("--out", out, "Run directory, or output root for reproduce");

  CLI::App* gen_world = app.add_subcommand("gen-world", "Build world, SFT policy, preference data");
  int round_idx = 0;
  CLI::App* train_rm = app.add_subcommand("train-rm", "Train one round's RM ensemble from scratch");
  train_rm->add_option("--stage", round_idx, "Round index")->required();
  CLI::App* attack = app.add_subcommand("attack", "Run the adversarial policy for a round");
  attack->add_option("--stage", round_idx, "Round index")->required();
  CLI::App* filter = app.add_subcommand("filter", "Filter a round's attack candidates");
  filter->add_option("--stage", round_idx, "Round index")->required();
  CLI::App* build_pairs = app.add_subcommand("build-pairs", "Build adversarial preference pairs");
  build_pairs->add_option("--stage", round_idx, "Round index")->required();
  CLI::App* round = app.add_subcommand("round", "Run one full round (rm, attack, filter, pairs, report)");
  round->add_option("--stage", round_idx, "Round index")->required();
  std::string method;
  CLI::App* train_policy_cmd =
      app.add_subcommand("train-policy", "Optimize a policy against one reward signal");
  train_policy_cmd->add_option("--stage", method, "baseline|ens_mean|ens_std|rrm|advrm")->required();
  CLI::App* evaluate = app.add_subcommand("evaluate", "Attack verdicts, correlations, ablations");
  CLI::App* report = app.add_subcommand("report", "Render markdown + SVG report for --out");
  CLI::App* reproduce =
      app.add_subcommand("reproduce", "Full pipeline over config seeds (or --seed) + aggregation");
  CLI::App* print_config = app.add_subcommand("print-config", "Print the effective config as JSON");
  CLI::App* all = app.add_subcommand("run-all", "All stages for one seed in --out");

  CLI11_PARSE(app, argc, argv);

  try {
    advrm::ExperimentConfig cfg =
        config_path.empty() ? advrm::default_config() : advrm::load_config(config_path);
    cfg = advrm::config_with_overrides(cfg, overrides);
    cfg.validate();

    if (print_config->parsed()) {
      std::cout << advrm::config_to_json(cfg).dump(2) << "\n";
      return 0;
    }
    if (report->parsed()) {
      advrm::render_report(out);
      std::cout << "report: " << (std::filesystem::path(out) / "report" / "index.md").string()
                << "\n";
      return 0;
    }
    if (reproduce->parsed()) {
      advrm::run_reproduce(cfg, out,
                           seed_opt->count() ? std::optional<std::uint64_t>(seed) : std::nullopt);
      std::cout << "reproduce: aggregate written under " << out << "/aggregate\n";
      return 0;
    }

    const std::uint64_t run_seed = seed_opt->count() ? seed : cfg.seeds.front();
    advrm::StageContext ctx = advrm::open_run(cfg, run_seed, out);
    if (gen_world->parsed()) {
      advrm::run_gen_world(ctx);
      std::cout << "gen-world: done\n";
    } else if (train_rm->parsed()) {
      advrm::run_round_rm(ctx, round_idx);
      std::cout << "train-rm: round " << round_idx << " done\n";
    } else if (attack->parsed()) {
      advrm::run_round_attack(ctx, round_idx);
      std::cout << "attack: round " << round_idx << " done\n";
    } else if (filter->parsed()) {
      advrm::run_round_filter(ctx, round_idx);
      std::cout << "filter: round " << round_idx << " done\n";
    } else if (build_pairs->parsed()) {
      advrm::run_round_pairs(ctx, round_idx);
      std::cout << "build-pairs: round " << round_idx << " done\n";
    } else if (round->parsed()) {
      advrm::run_round(ctx, round_idx);
      std::cout << "round " << round_idx << ": done\n";
    } else if (train_policy_cmd->parsed()) {
      advrm::run_train_policy(ctx, method);
      std::cout << "train-policy: " << method << " done\n";
    } else if (evaluate->parsed()) {
      advrm::run_evaluate(ctx);
      std::cout << "evaluate: done\n";
    } else if (all->parsed()) {
      advrm::run_all_stages(ctx);
      std::cout << "run-all: done\n";
    }
    return 0;
  } catch (const advrm::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const advrm::StateError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const advrm::NumericError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 2;
  }
}
