#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include <json.hpp>

#include "advrm/adv.hpp"
#include "advrm/policy_rl.hpp"
#include "advrm/sft.hpp"
#include "advrm/world.hpp"

namespace advrm {

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& section,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config: section '" + section + "' must be an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw ConfigError("config: unknown key '" + (section.empty() ? "" : section + ".") + item.key() + "'");
  }
}

template <typename T>
inline void maybe_get(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

// Reward-model training settings at the experiment level; the ensemble size
// and dataset sizes live here, the optimizer knobs map onto TrainRmConfig.
struct RmSettings {
  int epochs = 30;
  int batch_size = 128;
  double lr = 5e-3;
  int ensemble_k = 2;
  int n_pairs = 1000;          // original preference pairs
  int calibration_size = 1024; // SFT responses used to normalize scores

  TrainRmConfig train() const {
    TrainRmConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.lr = lr;
    return cfg;
  }

  void validate() const {
    if (epochs < 1 || batch_size < 1) throw ConfigError("rm: degenerate epochs/batch");
    if (lr <= 0.0) throw ConfigError("rm: lr must be > 0");
    if (ensemble_k < 2) throw ConfigError("rm: ensemble_k must be >= 2");
    if (n_pairs < 1) throw ConfigError("rm: n_pairs must be >= 1");
    if (calibration_size < 2) throw ConfigError("rm: calibration_size must be >= 2");
  }
};

struct EvalSettings {
  int refs_per_prompt = 64;        // SFT samples behind each per-prompt z-score
  int attacks_per_prompt = 4;      // best-of-n when extracting attacks from a policy
  int token_pert_variants = 100;
  int token_pert_max_edits = 3;
  int overopt_multiplier = 3;      // extend runs to this multiple of the best-gold step
  double hack_margin = 0.25;       // normalized gold units
  double ens_lambda = 0.5;         // pessimism weight for the mean-minus-std objective
  int rrm_multiplier = 2;
  // Attack-optimization steps for the mechanism ablations. Deliberately short
  // of full convergence: once every variant's policy has collapsed onto an
  // exploit family, filtering and weighting no longer have anything to
  // separate, so the comparison is run in the mixed-pool regime.
  int ablation_steps = 200;
  std::vector<int> budget_sweep = {250, 500, 1000};

  void validate() const {
    if (refs_per_prompt < 8) throw ConfigError("eval: refs_per_prompt must be >= 8");
    if (attacks_per_prompt < 1) throw ConfigError("eval: attacks_per_prompt must be >= 1");
    if (token_pert_variants < 1 || token_pert_max_edits < 1)
      throw ConfigError("eval: degenerate token perturbation budget");
    if (overopt_multiplier < 1) throw ConfigError("eval: overopt_multiplier must be >= 1");
    if (hack_margin <= 0.0) throw ConfigError("eval: hack_margin must be > 0");
    if (ens_lambda < 0.0) throw ConfigError("eval: ens_lambda must be >= 0");
    if (rrm_multiplier < 1) throw ConfigError("eval: rrm_multiplier must be >= 1");
    if (ablation_steps < 1) throw ConfigError("eval: ablation_steps must be >= 1");
    for (int b : budget_sweep)
      if (b < 1) throw ConfigError("eval: budget_sweep entries must be >= 1");
  }
};

struct ExperimentConfig {
  WorldConfig world;
  SftConfig sft;
  RmSettings rm;
  RLConfig rl;         // downstream policy optimization
  RLConfig attack_rl;  // adversarial policy optimization
  AttackConfig attack;
  EvalSettings eval;
  int rounds = 2;  // pair-producing rounds; round `rounds` is the final measured RM
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string out_dir = "runs";

  void validate() const {
    world.validate();
    rl.validate();
    attack_rl.validate();
    attack.validate();
    rm.validate();
    eval.validate();
    if (sft.candidates_per_prompt < 8) throw ConfigError("sft: candidates_per_prompt must be >= 8");
    if (rounds < 0) throw ConfigError("config: rounds must be >= 0");
    if (seeds.empty()) throw ConfigError("config: need at least one seed");
  }
};

inline ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.rl.kl_beta = 0.05;
  cfg.rl.lr = 2e-3;
  cfg.rl.batch_size = 32;
  cfg.rl.k = 4;
  cfg.rl.max_steps = 240;
  // The adversarial policy needs a long leash: weak KL pull, a slightly hot
  // sampler, and a large batch so the leave-one-out baseline stays stable.
  cfg.attack_rl = cfg.rl;
  cfg.attack_rl.kl_beta = 0.002;
  cfg.attack_rl.lr = 3e-3;
  cfg.attack_rl.temperature = 1.1;
  cfg.attack_rl.batch_size = 64;
  cfg.attack_rl.max_steps = 600;
  return cfg;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["world"] = {{"vocab", c.world.vocab},
                {"max_len", c.world.max_len},
                {"min_random_len", c.world.min_random_len},
                {"prompt_len", c.world.prompt_len},
                {"train_prompts", c.world.train_prompts},
                {"eval_prompts", c.world.eval_prompts},
                {"embed_dim", c.world.embed_dim},
                {"bigram_buckets", c.world.bigram_buckets},
                {"gold_hidden", c.world.gold_hidden},
                {"gold_gain", c.world.gold_gain},
                {"proxy_hidden", c.world.proxy_hidden},
                {"proxy_stats", c.world.proxy_stats}};
  j["sft"] = {{"candidates_per_prompt", c.sft.candidates_per_prompt},
              {"keep_fraction", c.sft.keep_fraction},
              {"epochs", c.sft.epochs},
              {"batch_size", c.sft.batch_size},
              {"lr", c.sft.lr},
              {"policy_embed_dim", c.sft.policy_embed_dim},
              {"policy_hidden_dim", c.sft.policy_hidden_dim}};
  j["rm"] = {{"epochs", c.rm.epochs},
             {"batch_size", c.rm.batch_size},
             {"lr", c.rm.lr},
             {"ensemble_k", c.rm.ensemble_k},
             {"n_pairs", c.rm.n_pairs},
             {"calibration_size", c.rm.calibration_size}};
  const auto rl_json = [](const RLConfig& r) {
    return nlohmann::json{{"kl_beta", r.kl_beta},     {"lr", r.lr},
                          {"batch_size", r.batch_size}, {"k", r.k},
                          {"temperature", r.temperature}, {"max_steps", r.max_steps},
                          {"checkpoint_every", r.checkpoint_every}};
  };
  j["rl"] = rl_json(c.rl);
  j["attack_rl"] = rl_json(c.attack_rl);
  j["attack"] = {{"lambda", c.attack.lambda},
                 {"c", c.attack.c},
                 {"threshold_samples", c.attack.threshold_samples},
                 {"pair_budget", c.attack.pair_budget},
                 {"policies", c.attack.policies},
                 {"use_filter", c.attack.use_filter},
                 {"use_threshold", c.attack.use_threshold},
                 {"max_chosen_attempts", c.attack.max_chosen_attempts}};
  j["eval"] = {{"refs_per_prompt", c.eval.refs_per_prompt},
               {"attacks_per_prompt", c.eval.attacks_per_prompt},
               {"token_pert_variants", c.eval.token_pert_variants},
               {"token_pert_max_edits", c.eval.token_pert_max_edits},
               {"overopt_multiplier", c.eval.overopt_multiplier},
               {"hack_margin", c.eval.hack_margin},
               {"ens_lambda", c.eval.ens_lambda},
               {"rrm_multiplier", c.eval.rrm_multiplier},
               {"ablation_steps", c.eval.ablation_steps},
               {"budget_sweep", c.eval.budget_sweep}};
  j["rounds"] = c.rounds;
  j["seeds"] = c.seeds;
  j["out_dir"] = c.out_dir;
  return j;
}

// Strict parse: unknown keys anywhere reject the whole config. Absent keys
// keep the defaults already present in `base`.
inline ExperimentConfig config_from_json(const nlohmann::json& j,
                                         ExperimentConfig base = default_config()) {
  using detail::check_keys;
  using detail::maybe_get;
  check_keys(j, "", {"world", "sft", "rm", "rl", "attack_rl", "attack", "eval", "rounds", "seeds",
                     "out_dir"});
  if (j.contains("world")) {
    const nlohmann::json& w = j.at("world");
    check_keys(w, "world",
               {"vocab", "max_len", "min_random_len", "prompt_len", "train_prompts", "eval_prompts",
                "embed_dim", "bigram_buckets", "gold_hidden", "gold_gain", "proxy_hidden",
                "proxy_stats"});
    maybe_get(w, "vocab", base.world.vocab);
    maybe_get(w, "max_len", base.world.max_len);
    maybe_get(w, "min_random_len", base.world.min_random_len);
    maybe_get(w, "prompt_len", base.world.prompt_len);
    maybe_get(w, "train_prompts", base.world.train_prompts);
    maybe_get(w, "eval_prompts", base.world.eval_prompts);
    maybe_get(w, "embed_dim", base.world.embed_dim);
    maybe_get(w, "bigram_buckets", base.world.bigram_buckets);
    maybe_get(w, "gold_hidden", base.world.gold_hidden);
    maybe_get(w, "gold_gain", base.world.gold_gain);
    maybe_get(w, "proxy_hidden", base.world.proxy_hidden);
    maybe_get(w, "proxy_stats", base.world.proxy_stats);
  }
  if (j.contains("sft")) {
    const nlohmann::json& s = j.at("sft");
    check_keys(s, "sft",
               {"candidates_per_prompt", "keep_fraction", "epochs", "batch_size", "lr",
                "policy_embed_dim", "policy_hidden_dim"});
    maybe_get(s, "candidates_per_prompt", base.sft.candidates_per_prompt);
    maybe_get(s, "keep_fraction", base.sft.keep_fraction);
    maybe_get(s, "epochs", base.sft.epochs);
    maybe_get(s, "batch_size", base.sft.batch_size);
    maybe_get(s, "lr", base.sft.lr);
    maybe_get(s, "policy_embed_dim", base.sft.policy_embed_dim);
    maybe_get(s, "policy_hidden_dim", base.sft.policy_hidden_dim);
  }
  if (j.contains("rm")) {
    const nlohmann::json& r = j.at("rm");
    check_keys(r, "rm", {"epochs", "batch_size", "lr", "ensemble_k", "n_pairs", "calibration_size"});
    maybe_get(r, "epochs", base.rm.epochs);
    maybe_get(r, "batch_size", base.rm.batch_size);
    maybe_get(r, "lr", base.rm.lr);
    maybe_get(r, "ensemble_k", base.rm.ensemble_k);
    maybe_get(r, "n_pairs", base.rm.n_pairs);
    maybe_get(r, "calibration_size", base.rm.calibration_size);
  }
  const auto parse_rl = [](const nlohmann::json& r, const std::string& section, RLConfig& out) {
    check_keys(r, section,
               {"kl_beta", "lr", "batch_size", "k", "temperature", "max_steps", "checkpoint_every"});
    maybe_get(r, "kl_beta", out.kl_beta);
    maybe_get(r, "lr", out.lr);
    maybe_get(r, "batch_size", out.batch_size);
    maybe_get(r, "k", out.k);
    maybe_get(r, "temperature", out.temperature);
    maybe_get(r, "max_steps", out.max_steps);
    maybe_get(r, "checkpoint_every", out.checkpoint_every);
  };
  if (j.contains("rl")) parse_rl(j.at("rl"), "rl", base.rl);
  if (j.contains("attack_rl")) parse_rl(j.at("attack_rl"), "attack_rl", base.attack_rl);
  if (j.contains("attack")) {
    const nlohmann::json& a = j.at("attack");
    check_keys(a, "attack",
               {"lambda", "c", "threshold_samples", "pair_budget", "policies", "use_filter",
                "use_threshold", "max_chosen_attempts"});
    maybe_get(a, "lambda", base.attack.lambda);
    maybe_get(a, "c", base.attack.c);
    maybe_get(a, "threshold_samples", base.attack.threshold_samples);
    maybe_get(a, "pair_budget", base.attack.pair_budget);
    maybe_get(a, "policies", base.attack.policies);
    maybe_get(a, "use_filter", base.attack.use_filter);
    maybe_get(a, "use_threshold", base.attack.use_threshold);
    maybe_get(a, "max_chosen_attempts", base.attack.max_chosen_attempts);
  }
  if (j.contains("eval")) {
    const nlohmann::json& e = j.at("eval");
    check_keys(e, "eval",
               {"refs_per_prompt", "attacks_per_prompt", "token_pert_variants", "token_pert_max_edits",
                "overopt_multiplier", "hack_margin", "ens_lambda", "rrm_multiplier", "ablation_steps", "budget_sweep"});
    maybe_get(e, "refs_per_prompt", base.eval.refs_per_prompt);
    maybe_get(e, "attacks_per_prompt", base.eval.attacks_per_prompt);
    maybe_get(e, "token_pert_variants", base.eval.token_pert_variants);
    maybe_get(e, "token_pert_max_edits", base.eval.token_pert_max_edits);
    maybe_get(e, "overopt_multiplier", base.eval.overopt_multiplier);
    maybe_get(e, "hack_margin", base.eval.hack_margin);
    maybe_get(e, "ens_lambda", base.eval.ens_lambda);
    maybe_get(e, "rrm_multiplier", base.eval.rrm_multiplier);
    maybe_get(e, "ablation_steps", base.eval.ablation_steps);
    maybe_get(e, "budget_sweep", base.eval.budget_sweep);
  }
  maybe_get(j, "rounds", base.rounds);
  maybe_get(j, "seeds", base.seeds);
  maybe_get(j, "out_dir", base.out_dir);
  base.validate();
  return base;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: cannot parse " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// One `--set key.path=value` override applied to the JSON form of a config.
// Values parse as JSON when possible (numbers, bools, arrays) and fall back
// to plain strings.
inline void apply_override(nlohmann::json& j, const std::string& spec) {
  const std::size_t eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + spec + "' is not of the form key=value");
  const std::string path = spec.substr(0, eq);
  const std::string raw = spec.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError("override '" + spec + "' has an empty key segment");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline ExperimentConfig config_with_overrides(ExperimentConfig base,
                                              const std::vector<std::string>& overrides) {
  if (overrides.empty()) {
    base.validate();
    return base;
  }
  nlohmann::json j = config_to_json(base);
  for (const std::string& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

}  // namespace advrm
