#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "advrm/adv.hpp"
#include "advrm/config.hpp"
#include "advrm/eval.hpp"
#include "advrm/manifest.hpp"

namespace advrm {

struct RunPaths {
  std::filesystem::path root;

  RunPaths() = default;
  explicit RunPaths(std::filesystem::path r) : root(std::move(r)) {}

  std::filesystem::path manifest_file() const { return root / "manifest.json"; }
  std::filesystem::path world_file() const { return root / "world.json"; }
  std::filesystem::path sft_base() const { return root / "sft_policy"; }
  std::filesystem::path dataset_file() const { return root / "dataset.jsonl"; }

  std::filesystem::path round_dir(int r) const { return root / ("round" + std::to_string(r)); }
  std::filesystem::path rm_base(int r, int m) const {
    return round_dir(r) / ("rm_m" + std::to_string(m));
  }
  std::filesystem::path attack_policy_base(int r, int j) const {
    return round_dir(r) / ("attack_policy_p" + std::to_string(j));
  }
  std::filesystem::path candidates_file(int r) const { return round_dir(r) / "candidates.jsonl"; }
  std::filesystem::path retained_file(int r) const { return round_dir(r) / "retained.jsonl"; }
  std::filesystem::path pairs_file(int r) const { return round_dir(r) / "pairs.jsonl"; }
  std::filesystem::path attack_meta_file(int r) const { return round_dir(r) / "attack.json"; }
  std::filesystem::path attack_rl_trace_file(int r, int j) const {
    return round_dir(r) / ("rl_trace_p" + std::to_string(j) + ".csv");
  }
  std::filesystem::path attack_rm_trace_file(int r, int j) const {
    return round_dir(r) / ("attack_trace_p" + std::to_string(j) + ".csv");
  }
  std::filesystem::path round_report_file(int r) const { return round_dir(r) / "report.json"; }
  std::filesystem::path round_verdicts_file(int r) const { return round_dir(r) / "verdicts.csv"; }
  std::filesystem::path round_attacks_file(int r) const { return round_dir(r) / "eval_attacks.jsonl"; }

  std::filesystem::path policy_dir() const { return root / "policy"; }
  std::filesystem::path policy_base(const std::string& m) const { return policy_dir() / m; }
  std::filesystem::path policy_trace_file(const std::string& m) const {
    return policy_dir() / (m + "_trace.csv");
  }
  std::filesystem::path policy_curve_file(const std::string& m) const {
    return policy_dir() / (m + "_curve.json");
  }
  std::filesystem::path rrm_rm_base() const { return policy_dir() / "rrm_rm"; }

  std::filesystem::path eval_dir() const { return root / "eval"; }
  std::filesystem::path verdicts_file() const { return eval_dir() / "verdicts.csv"; }
  std::filesystem::path summary_file() const { return eval_dir() / "summary.csv"; }
  std::filesystem::path rounds_file() const { return eval_dir() / "rounds.csv"; }
  std::filesystem::path correlations_file() const { return eval_dir() / "correlations.csv"; }
  std::filesystem::path fig1_sft_file() const { return eval_dir() / "fig1_sft.csv"; }
  std::filesystem::path fig1_adv_file() const { return eval_dir() / "fig1_adv.csv"; }
  std::filesystem::path budget_file() const { return eval_dir() / "budget_sweep.csv"; }
  std::filesystem::path ablation_file() const { return eval_dir() / "ablations.csv"; }
  std::filesystem::path downstream_file() const { return eval_dir() / "downstream.csv"; }
  std::filesystem::path eval_json_file() const { return eval_dir() / "eval.json"; }

  std::filesystem::path report_dir() const { return root / "report"; }
};

struct StageContext {
  ExperimentConfig cfg;
  std::uint64_t seed = 0;
  RunPaths paths;
  RunManifest manifest;

  void save_manifest() { manifest.save(paths.manifest_file()); }
};

inline std::string rel_path(const RunPaths& paths, const std::filesystem::path& p) {
  return p.lexically_relative(paths.root).generic_string();
}

// Opens (or creates) a run directory. A directory created under a different
// config or seed is refused rather than silently mixed.
inline StageContext open_run(const ExperimentConfig& cfg, std::uint64_t seed,
                             const std::filesystem::path& out) {
  cfg.validate();
  StageContext ctx;
  ctx.cfg = cfg;
  ctx.seed = seed;
  ctx.paths = RunPaths(out);
  std::filesystem::create_directories(out);
  if (std::filesystem::exists(ctx.paths.manifest_file())) {
    ctx.manifest = RunManifest::load(ctx.paths.manifest_file());
    if (ctx.manifest.seed != seed)
      throw ConfigError("run directory " + out.string() + " was created with seed " +
                        std::to_string(ctx.manifest.seed) + ", not " + std::to_string(seed) +
                        "; use a fresh --out");
    if (ctx.manifest.config_snapshot != config_to_json(cfg))
      throw ConfigError("run directory " + out.string() +
                        " was created with a different config; use a fresh --out");
  } else {
    ctx.manifest.config_snapshot = config_to_json(cfg);
    ctx.manifest.seed = seed;
    ctx.save_manifest();
  }
  return ctx;
}

// ---------------------------------------------------------------------------
// Stage: gen-world. Builds the frozen world, the SFT policy, and the original
// gold-labeled preference dataset.
// ---------------------------------------------------------------------------

inline void run_gen_world(StageContext& ctx) {
  if (ctx.manifest.done("gen-world")) return;
  const std::uint64_t world_seed = derive_seed(ctx.seed, "world");
  World world = build_world(ctx.cfg.world, world_seed);
  const PolicyNet sft = make_sft_policy(world, ctx.cfg.sft, derive_seed(ctx.seed, "sft"));
  int skipped = 0;
  const PreferenceDataset data =
      gen_preference_dataset(world, sft, ctx.cfg.rm.n_pairs, derive_seed(ctx.seed, "dataset"), 16, &skipped);

  nlohmann::json wj;
  wj["world_seed"] = world_seed;
  wj["gold_fingerprint"] = world.gold.params.fingerprint();
  wj["sft_fingerprint"] = sft.params.fingerprint();
  wj["pairs"] = data.size();
  wj["tied_pairs_skipped"] = skipped;
  write_file(ctx.paths.world_file(), wj.dump(2) + "\n");
  save_policy(sft, ctx.paths.sft_base());
  save_dataset(ctx.paths.dataset_file(), data);

  ctx.manifest.record_artifact("gen-world:world", rel_path(ctx.paths, ctx.paths.world_file()));
  ctx.manifest.record_artifact("gen-world:sft",
                               rel_path(ctx.paths, ctx.paths.sft_base()) + ".ckpt");
  ctx.manifest.record_artifact("gen-world:dataset", rel_path(ctx.paths, ctx.paths.dataset_file()));
  ctx.manifest.mark_done("gen-world");
  ctx.save_manifest();
}

// Frozen run inputs shared by most stages. The gold scorer is calibrated
// against the SFT reference set so gold curves read in normalized units.
struct RunCore {
  World world;
  PolicyNet sft;
  ReferenceSet calib_refs;
};

inline RunCore load_core(const StageContext& ctx, const std::string& for_stage) {
  ctx.manifest.require("gen-world", for_stage, ctx.paths.root);
  RunCore core;
  const nlohmann::json wj = nlohmann::json::parse(read_file(ctx.paths.world_file()));
  core.world = build_world(ctx.cfg.world, wj.at("world_seed").get<std::uint64_t>());
  if (core.world.gold.params.fingerprint() != wj.at("gold_fingerprint").get<std::uint64_t>())
    throw StateError("world checkpoint does not match this config/seed; rerun `advrm gen-world`");
  core.sft = load_policy(ctx.paths.sft_base());
  core.calib_refs =
      sample_reference_set(core.world, core.sft, ctx.cfg.rm.calibration_size, derive_seed(ctx.seed, "calib"));
  calibrate(core.world.gold, core.calib_refs, core.world.prompt_lookup());
  return core;
}

// ---------------------------------------------------------------------------
// Round stages: rm -> attack -> filter -> pairs -> report.
// Round r trains on the original dataset plus every earlier round's pairs;
// round index cfg.rounds is the final, measurement-only round.
// ---------------------------------------------------------------------------

inline std::string round_stage(int r, const char* part = nullptr) {
  std::string s = "round" + std::to_string(r);
  if (part) {
    s += '/';
    s += part;
  }
  return s;
}

inline void check_round_index(const StageContext& ctx, int r) {
  if (r < 0 || r > ctx.cfg.rounds)
    throw ConfigError("round index " + std::to_string(r) + " out of range; config allows 0.." +
                      std::to_string(ctx.cfg.rounds));
}

inline PreferenceDataset round_dataset(const StageContext& ctx, int r, const std::string& for_stage) {
  PreferenceDataset data = load_dataset(ctx.paths.dataset_file());
  for (int i = 0; i < r; ++i) {
    ctx.manifest.require(round_stage(i, "pairs"), for_stage, ctx.paths.root);
    const PreferenceDataset pairs = load_dataset(ctx.paths.pairs_file(i));
    data.insert(data.end(), pairs.begin(), pairs.end());
  }
  return data;
}

inline void run_round_rm(StageContext& ctx, int r) {
  check_round_index(ctx, r);
  const std::string stage = round_stage(r, "rm");
  if (ctx.manifest.done(stage)) return;
  const RunCore core = load_core(ctx, stage);
  const PreferenceDataset data = round_dataset(ctx, r, stage);
  std::filesystem::create_directories(ctx.paths.round_dir(r));

  const TrainRmConfig tr = ctx.cfg.rm.train();
  for (int m = 0; m < ctx.cfg.rm.ensemble_k; ++m) {
    const std::uint64_t rm_seed =
        derive_seed(ctx.seed, "rm", static_cast<std::uint64_t>(r) * 1000 + static_cast<std::uint64_t>(m));
    // From-scratch lineage: each member of each round initializes from its own
    // derived seed, never from a previous round's checkpoint.
    if (r > 0) {
      const RewardNet prev = load_reward_net(ctx.paths.rm_base(r - 1, m), core.world.proxy_features);
      if (prev.train_seed == rm_seed)
        throw StateError("reward model seed lineage collision between rounds " + std::to_string(r - 1) +
                         " and " + std::to_string(r));
    }
    RewardNet rm = train_rm(data, core.world.prompt_lookup(), core.world.proxy_features,
                            core.world.proxy_arch(), tr, rm_seed,
                            "round" + std::to_string(r) + "-m" + std::to_string(m));
    calibrate(rm, core.calib_refs, core.world.prompt_lookup());
    rm.frozen = true;
    save_reward_net(rm, ctx.paths.rm_base(r, m));
    ctx.manifest.record_artifact(stage + ":m" + std::to_string(m),
                                 rel_path(ctx.paths, ctx.paths.rm_base(r, m)) + ".ckpt");
  }
  ctx.manifest.mark_done(stage);
  ctx.save_manifest();
}

inline std::vector<RewardNet> load_round_rms(const StageContext& ctx, int r, const std::string& for_stage,
                                             const World& world) {
  ctx.manifest.require(round_stage(r, "rm"), for_stage, ctx.paths.root);
  std::vector<RewardNet> rms;
  for (int m = 0; m < ctx.cfg.rm.ensemble_k; ++m)
    rms.push_back(load_reward_net(ctx.paths.rm_base(r, m), world.proxy_features));
  return rms;
}

inline ThresholdTable round_thresholds(const StageContext& ctx, int r, const World& world,
                                       const PolicyNet& sft, const RewardNet& rm1) {
  return compute_thresholds(world.train_prompts, sft, rm1, ctx.cfg.attack.threshold_samples,
                            derive_seed(ctx.seed, "attack", static_cast<std::uint64_t>(r)));
}

// Trains the configured number of independent adversarial policies against a
// given RM pair, sharing one threshold table and uncertainty reference.
// Shared by the round attack stage and the evaluation-time ablation variants.
inline std::vector<AttackRun> run_attack_with(const RunCore& core, const RewardNet& rm1,
                                              const RewardNet& rm2, const AttackConfig& atk,
                                              const RLConfig& rl, std::uint64_t master) {
  const ThresholdTable thresholds = compute_thresholds(
      core.world.train_prompts, core.sft, rm1, atk.threshold_samples, master);
  const UncertaintyRef uref =
      uncertainty_reference(core.calib_refs, rm1, rm2, atk.lambda, core.world.prompt_lookup());
  std::vector<AttackRun> runs;
  runs.reserve(static_cast<std::size_t>(atk.policies));
  for (int j = 0; j < atk.policies; ++j)
    runs.push_back(train_adversarial_policy(core.world, core.sft, rm1, rm2, thresholds, uref, atk,
                                            rl,
                                            derive_seed(master, "attack-policy", static_cast<std::uint64_t>(j))));
  return runs;
}

inline std::vector<AdvSample> pool_candidates(const std::vector<AttackRun>& runs) {
  std::vector<AdvSample> pooled;
  for (const AttackRun& run : runs)
    pooled.insert(pooled.end(), run.candidates.begin(), run.candidates.end());
  return pooled;
}

inline void run_round_attack(StageContext& ctx, int r) {
  check_round_index(ctx, r);
  const std::string stage = round_stage(r, "attack");
  if (ctx.manifest.done(stage)) return;
  const RunCore core = load_core(ctx, stage);
  const std::vector<RewardNet> rms = load_round_rms(ctx, r, stage, core.world);

  const std::uint64_t master = derive_seed(ctx.seed, "attack", static_cast<std::uint64_t>(r));
  const std::vector<AttackRun> runs =
      run_attack_with(core, rms[0], rms[1], ctx.cfg.attack, ctx.cfg.attack_rl, master);
  int violations = 0;
  for (std::size_t j = 0; j < runs.size(); ++j) {
    if (runs[j].aborted)
      throw NumericError("round " + std::to_string(r) + " attack policy " + std::to_string(j) +
                         " aborted on non-finite loss");
    violations += runs[j].dominance_violations();
    save_policy(runs[j].policy, ctx.paths.attack_policy_base(r, static_cast<int>(j)));
    write_trace(ctx.paths.attack_rl_trace_file(r, static_cast<int>(j)), runs[j].trace);
    write_attack_trace(ctx.paths.attack_rm_trace_file(r, static_cast<int>(j)), runs[j].rm_trace);
    ctx.manifest.record_artifact(
        stage + ":policy" + std::to_string(j),
        rel_path(ctx.paths, ctx.paths.attack_policy_base(r, static_cast<int>(j))) + ".ckpt");
  }
  const std::vector<AdvSample> pooled = pool_candidates(runs);
  save_adv_dataset(ctx.paths.candidates_file(r), pooled);
  nlohmann::json meta;
  meta["candidates"] = pooled.size();
  meta["policies"] = runs.size();
  meta["dominance_violations"] = violations;
  write_file(ctx.paths.attack_meta_file(r), meta.dump(2) + "\n");

  ctx.manifest.record_artifact(stage + ":candidates",
                               rel_path(ctx.paths, ctx.paths.candidates_file(r)));
  ctx.manifest.record_artifact(stage + ":meta", rel_path(ctx.paths, ctx.paths.attack_meta_file(r)));
  ctx.manifest.mark_done(stage);
  ctx.save_manifest();
}

inline void run_round_filter(StageContext& ctx, int r) {
  check_round_index(ctx, r);
  const std::string stage = round_stage(r, "filter");
  if (ctx.manifest.done(stage)) return;
  ctx.manifest.require(round_stage(r, "attack"), stage, ctx.paths.root);
  const std::vector<AdvSample> candidates = load_adv_dataset(ctx.paths.candidates_file(r));
  const std::vector<AdvSample> retained = filter_candidates(candidates, ctx.cfg.attack.use_filter);
  save_adv_dataset(ctx.paths.retained_file(r), retained);
  ctx.manifest.record_artifact(stage + ":retained", rel_path(ctx.paths, ctx.paths.retained_file(r)));
  ctx.manifest.mark_done(stage);
  ctx.save_manifest();
}

inline void run_round_pairs(StageContext& ctx, int r) {
  check_round_index(ctx, r);
  const std::string stage = round_stage(r, "pairs");
  if (ctx.manifest.done(stage)) return;
  ctx.manifest.require(round_stage(r, "filter"), stage, ctx.paths.root);
  const std::vector<AdvSample> retained = load_adv_dataset(ctx.paths.retained_file(r));
  PreferenceDataset pairs;
  if (!retained.empty()) {
    const RunCore core = load_core(ctx, stage);
    const std::vector<RewardNet> rms = load_round_rms(ctx, r, stage, core.world);
    const ThresholdTable thresholds = round_thresholds(ctx, r, core.world, core.sft, rms[0]);
    int dropped = 0;
    pairs = build_adv_pairs(retained, core.world, core.sft, rms[0], thresholds,
                            ctx.cfg.attack.pair_budget,
                            derive_seed(ctx.seed, "pairs", static_cast<std::uint64_t>(r)),
                            ctx.cfg.attack, &dropped);
  }
  save_dataset(ctx.paths.pairs_file(r), pairs);
  ctx.manifest.record_artifact(stage + ":pairs", rel_path(ctx.paths, ctx.paths.pairs_file(r)));
  ctx.manifest.mark_done(stage);
  ctx.save_manifest();
}

inline void save_attack_set(const std::filesystem::path& path, const std::map<int, Response>& attacks) {
  std::string out;
  for (const auto& [pid, response] : attacks)
    out += "{\"prompt_id\": " + std::to_string(pid) + ", \"tokens\": " +
           tokens_to_string(response.tokens) + "}\n";
  write_file(path, out);
}

inline std::map<int, Response> load_attack_set(const std::filesystem::path& path) {
  std::map<int, Response> attacks;
  for (const std::string& line : read_lines(path)) {
    const nlohmann::json j = nlohmann::json::parse(line);
    Response r;
    r.tokens = j.at("tokens").get<std::vector<int>>();
    attacks[j.at("prompt_id").get<int>()] = std::move(r);
  }
  return attacks;
}

// Judges one attack set (standard + strict) against a target RM on the eval
// prompts. The reference response for the standard rule is the first SFT
// reference of each prompt.
inline std::vector<AttackVerdict> judge_attack_set(const std::map<int, Response>& attacks,
                                                   const std::string& method, const World& world,
                                                   const PromptReferences& prompt_refs,
                                                   const ScoreFn& rm1_fn, const ScoreFn& gold_fn,
                                                   const ScoreReferences& refs) {
  std::vector<AttackVerdict> verdicts;
  for (const auto& [pid, response] : attacks) {
    const Prompt& prompt = world.prompt(pid);
    AttackVerdict v = judge_strict(pid, rm1_fn(prompt, response), gold_fn(prompt, response), refs);
    v.method = method;
    const Response& ref = prompt_refs.at(pid).front();
    v.standard = success_standard(rm1_fn(prompt, response), rm1_fn(prompt, ref),
                                  gold_fn(prompt, response), gold_fn(prompt, ref));
    verdicts.push_back(std::move(v));
  }
  return verdicts;
}

inline void run_round_report(StageContext& ctx, int r) {
  check_round_index(ctx, r);
  const std::string stage = round_stage(r);
  if (ctx.manifest.done(stage)) return;
  ctx.manifest.require(round_stage(r, "filter"), stage, ctx.paths.root);
  if (r < ctx.cfg.rounds) ctx.manifest.require(round_stage(r, "pairs"), stage, ctx.paths.root);

  const RunCore core = load_core(ctx, stage);
  const std::vector<RewardNet> rms = load_round_rms(ctx, r, stage, core.world);

  const ScoreFn select_u = [&](const Prompt& p, const Response& y) {
    return rms[0].score(p, y) - ctx.cfg.attack.lambda * rms[1].score(p, y);
  };
  // Best-of-n per policy, then best across policies by the same signal.
  const nlohmann::json attack_meta = nlohmann::json::parse(read_file(ctx.paths.attack_meta_file(r)));
  const int n_policies = attack_meta.at("policies").get<int>();
  std::map<int, Response> attacks;
  for (int j = 0; j < n_policies; ++j) {
    const PolicyNet attack_policy = load_policy(ctx.paths.attack_policy_base(r, j));
    const std::map<int, Response> att_j = best_of_n_attack(
        attack_policy, core.world.eval_prompts, select_u, ctx.cfg.eval.attacks_per_prompt,
        derive_seed(ctx.seed, "round-eval", static_cast<std::uint64_t>(r) * 100 + static_cast<std::uint64_t>(j)),
        "round-attacks");
    for (const auto& [pid, response] : att_j) {
      const Prompt& p = core.world.prompt(pid);
      auto it = attacks.find(pid);
      if (it == attacks.end() || select_u(p, response) > select_u(p, it->second))
        attacks[pid] = response;
    }
  }

  const PromptReferences prompt_refs = sample_prompt_references(
      core.world.eval_prompts, core.sft, ctx.cfg.eval.refs_per_prompt, derive_seed(ctx.seed, "eval-refs"));
  const ScoreFn rm1_fn = [&](const Prompt& p, const Response& y) { return rms[0].score(p, y); };
  const ScoreFn gold_fn = [&](const Prompt& p, const Response& y) {
    return core.world.gold.score(p, y);
  };
  const ScoreReferences refs =
      build_score_references(prompt_refs, rm1_fn, gold_fn, core.world.prompt_lookup());
  const std::vector<AttackVerdict> verdicts = judge_attack_set(
      attacks, "advrm_round" + std::to_string(r), core.world, prompt_refs, rm1_fn, gold_fn, refs);

  int strict_hits = 0;
  for (const AttackVerdict& v : verdicts) strict_hits += v.strict ? 1 : 0;

  const std::vector<AdvSample> retained = load_adv_dataset(ctx.paths.retained_file(r));

  RoundReport report;
  report.round = r;
  report.candidates = attack_meta.at("candidates").get<long>();
  report.retained = static_cast<long>(retained.size());
  report.pairs_built = r < ctx.cfg.rounds && std::filesystem::exists(ctx.paths.pairs_file(r))
                           ? static_cast<long>(load_dataset(ctx.paths.pairs_file(r)).size())
                           : 0;
  report.strict_success_rate =
      success_rate(strict_hits, static_cast<int>(verdicts.size())).pct;
  report.attack_failed = retained.empty();
  report.dominance_violations = attack_meta.at("dominance_violations").get<int>();

  write_file(ctx.paths.round_report_file(r), report.to_json().dump(2) + "\n");
  write_verdicts(ctx.paths.round_verdicts_file(r), verdicts);
  save_attack_set(ctx.paths.round_attacks_file(r), attacks);
  ctx.manifest.record_artifact(stage + ":report", rel_path(ctx.paths, ctx.paths.round_report_file(r)));
  ctx.manifest.record_artifact(stage + ":verdicts",
                               rel_path(ctx.paths, ctx.paths.round_verdicts_file(r)));
  ctx.manifest.record_artifact(stage + ":attacks",
                               rel_path(ctx.paths, ctx.paths.round_attacks_file(r)));
  ctx.manifest.mark_done(stage);
  ctx.save_manifest();
}

inline void run_round(StageContext& ctx, int r) {
  check_round_index(ctx, r);
  run_round_rm(ctx, r);
  run_round_attack(ctx, r);
  run_round_filter(ctx, r);
  if (r < ctx.cfg.rounds) run_round_pairs(ctx, r);
  run_round_report(ctx, r);
}

// ---------------------------------------------------------------------------
// Stage: train-policy. Downstream KL-regularized policy optimization against
// one of the comparison reward signals; runs are extended to
// overopt_multiplier x the best-gold step so hacking has room to show.
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& policy_methods() {
  static const std::vector<std::string> methods = {"baseline", "ens_mean", "ens_std", "rrm", "advrm"};
  return methods;
}

inline void run_train_policy(StageContext& ctx, const std::string& method) {
  bool known = false;
  for (const std::string& m : policy_methods()) known = known || m == method;
  if (!known) throw ConfigError("unknown policy method '" + method + "'");
  const std::string stage = "policy/" + method;
  if (ctx.manifest.done(stage)) return;

  const RunCore core = load_core(ctx, stage);
  std::filesystem::create_directories(ctx.paths.policy_dir());

  std::vector<RewardNet> rms;
  RewardNet rrm_rm;
  ScoreFn reward;
  if (method == "baseline") {
    rms = load_round_rms(ctx, 0, stage, core.world);
    reward = [&](const Prompt& p, const Response& y) { return rms[0].score(p, y); };
  } else if (method == "ens_mean" || method == "ens_std") {
    rms = load_round_rms(ctx, 0, stage, core.world);
    const double lambda = method == "ens_std" ? ctx.cfg.eval.ens_lambda : 0.0;
    reward = [&rms, lambda](const Prompt& p, const Response& y) {
      std::vector<double> scores;
      scores.reserve(rms.size());
      for (const RewardNet& rm : rms) scores.push_back(rm.score(p, y));
      return ensemble_objective(scores, lambda);
    };
  } else if (method == "rrm") {
    if (!std::filesystem::exists(ctx.paths.rrm_rm_base().string() + ".ckpt")) {
      const PreferenceDataset data = load_dataset(ctx.paths.dataset_file());
      const auto gold_raw = [&](int pid, const Response& y) {
        return core.world.gold.raw_score(core.world.prompt(pid), y);
      };
      const PreferenceDataset aug =
          rrm_augment(data, ctx.cfg.eval.rrm_multiplier, derive_seed(ctx.seed, "rrm-data"), gold_raw);
      RewardNet rm = train_rm(aug, core.world.prompt_lookup(), core.world.proxy_features,
                              core.world.proxy_arch(), ctx.cfg.rm.train(),
                              derive_seed(ctx.seed, "rrm-rm"), "rrm");
      calibrate(rm, core.calib_refs, core.world.prompt_lookup());
      rm.frozen = true;
      save_reward_net(rm, ctx.paths.rrm_rm_base());
    }
    rrm_rm = load_reward_net(ctx.paths.rrm_rm_base(), core.world.proxy_features);
    reward = [&](const Prompt& p, const Response& y) { return rrm_rm.score(p, y); };
  } else {  // advrm: the final round's retrained RM
    rms = load_round_rms(ctx, ctx.cfg.rounds, stage, core.world);
    reward = [&](const Prompt& p, const Response& y) { return rms[0].score(p, y); };
  }
  const ScoreFn gold = [&](const Prompt& p, const Response& y) { return core.world.gold.score(p, y); };

  PolicyNet policy = clone_policy(core.sft);
  const std::uint64_t master = derive_seed(ctx.seed, ("policy-" + method).c_str());
  RLConfig rl = ctx.cfg.rl;
  TrainPolicyResult first = train_policy(policy, reward, gold, core.world.train_prompts, rl, master);
  if (first.aborted) throw NumericError("policy '" + method + "' training aborted on non-finite loss");

  std::vector<StepMetrics> trace = first.trace;
  const int best_step = hacking_curve_report(trace, ctx.cfg.eval.hack_margin).best_step;
  const int target_total = ctx.cfg.eval.overopt_multiplier * (best_step + 1);
  if (target_total > rl.max_steps) {
    RLConfig ext = rl;
    ext.max_steps = target_total;
    const TrainPolicyResult more = train_policy(policy, reward, gold, core.world.train_prompts, ext,
                                                master, nullptr, nullptr, first.steps_done);
    if (more.aborted)
      throw NumericError("policy '" + method + "' extension aborted on non-finite loss");
    trace.insert(trace.end(), more.trace.begin(), more.trace.end());
  }

  save_policy(policy, ctx.paths.policy_base(method));
  write_trace(ctx.paths.policy_trace_file(method), trace);
  const HackingCurveReport curve = hacking_curve_report(trace, ctx.cfg.eval.hack_margin);
  nlohmann::json cj;
  cj["method"] = method;
  cj["best_step"] = curve.best_step;
  cj["best_gold"] = curve.best_gold;
  cj["final_gold"] = curve.final_gold;
  cj["hacked"] = curve.hacked;
  cj["total_steps"] = trace.size();
  write_file(ctx.paths.policy_curve_file(method), cj.dump(2) + "\n");

  ctx.manifest.record_artifact(stage + ":policy",
                               rel_path(ctx.paths, ctx.paths.policy_base(method)) + ".ckpt");
  ctx.manifest.record_artifact(stage + ":trace",
                               rel_path(ctx.paths, ctx.paths.policy_trace_file(method)));
  ctx.manifest.record_artifact(stage + ":curve",
                               rel_path(ctx.paths, ctx.paths.policy_curve_file(method)));
  ctx.manifest.mark_done(stage);
  ctx.save_manifest();
}

// ---------------------------------------------------------------------------
// Stage: evaluate. Verdicts for all attack methods against the round-0 RM,
// per-round robustness, uncertainty-gold correlations, the pair-budget sweep,
// the mechanism ablations, and the downstream method summary.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<const AdvSample*> top_by_z(const std::vector<AdvSample>& samples, int cap) {
  std::vector<const AdvSample*> sorted;
  sorted.reserve(samples.size());
  for (const AdvSample& s : samples) sorted.push_back(&s);
  std::sort(sorted.begin(), sorted.end(), [](const AdvSample* a, const AdvSample* b) {
    if (a->z != b->z) return a->z > b->z;
    if (a->prompt_id != b->prompt_id) return a->prompt_id < b->prompt_id;
    return a->response.tokens < b->response.tokens;
  });
  if (static_cast<int>(sorted.size()) > cap) sorted.resize(static_cast<std::size_t>(cap));
  return sorted;
}

}  // namespace detail

inline void run_evaluate(StageContext& ctx) {
  const std::string stage = "evaluate";
  if (ctx.manifest.done(stage)) return;
  for (int r = 0; r <= ctx.cfg.rounds; ++r) ctx.manifest.require(round_stage(r), stage, ctx.paths.root);
  ctx.manifest.require("policy/baseline", stage, ctx.paths.root);

  const RunCore core = load_core(ctx, stage);
  const std::vector<RewardNet> rms0 = load_round_rms(ctx, 0, stage, core.world);
  std::filesystem::create_directories(ctx.paths.eval_dir());
  const std::uint64_t eseed = derive_seed(ctx.seed, "evaluate");
  nlohmann::json ej;

  const PromptReferences prompt_refs = sample_prompt_references(
      core.world.eval_prompts, core.sft, ctx.cfg.eval.refs_per_prompt, derive_seed(ctx.seed, "eval-refs"));
  const ScoreFn rm1_fn = [&](const Prompt& p, const Response& y) { return rms0[0].score(p, y); };
  const ScoreFn gold_fn = [&](const Prompt& p, const Response& y) {
    return core.world.gold.score(p, y);
  };
  const ScoreReferences refs0 =
      build_score_references(prompt_refs, rm1_fn, gold_fn, core.world.prompt_lookup());

  // Table-1 analog: all methods judged against the round-0 RM. The Adv-RM row
  // reuses the round-0 verdicts so the number matches the round report.
  std::vector<AttackVerdict> verdicts;
  for (AttackVerdict v : read_verdicts(ctx.paths.round_verdicts_file(0))) {
    v.method = "advrm";
    verdicts.push_back(std::move(v));
  }
  {
    std::map<int, Response> pert_attacks;
    for (const Prompt& p : core.world.eval_prompts) {
      // substitution-only edits need a non-empty starting response
      const Response* start = nullptr;
      for (const Response& r : prompt_refs.at(p.id))
        if (!r.tokens.empty()) {
          start = &r;
          break;
        }
      if (!start) continue;
      pert_attacks[p.id] = token_perturbation_attack(*start, p, rm1_fn,
                                                     ctx.cfg.eval.token_pert_variants,
                                                     ctx.cfg.eval.token_pert_max_edits,
                                                     ctx.cfg.world.vocab, eseed);
    }
    const std::vector<AttackVerdict> pert = judge_attack_set(
        pert_attacks, "token_pert", core.world, prompt_refs, rm1_fn, gold_fn, refs0);
    verdicts.insert(verdicts.end(), pert.begin(), pert.end());
  }
  {
    const PolicyNet overopt_policy = load_policy(ctx.paths.policy_base("baseline"));
    const std::map<int, Response> overopt_attacks =
        best_of_n_attack(overopt_policy, core.world.eval_prompts, rm1_fn,
                         ctx.cfg.eval.attacks_per_prompt, eseed, "overopt-attacks");
    const std::vector<AttackVerdict> over = judge_attack_set(
        overopt_attacks, "overopt", core.world, prompt_refs, rm1_fn, gold_fn, refs0);
    verdicts.insert(verdicts.end(), over.begin(), over.end());
  }
  write_verdicts(ctx.paths.verdicts_file(), verdicts);
  const std::vector<MethodSummary> summary = summarize_verdicts(verdicts);
  write_method_summary(ctx.paths.summary_file(), summary);
  for (const MethodSummary& s : summary)
    ej["summary"].push_back({{"method", s.method},
                             {"n", s.n},
                             {"standard_pct", s.standard.pct},
                             {"standard_se", s.standard.se},
                             {"strict_pct", s.strict.pct},
                             {"strict_se", s.strict.se}});

  // Per-round robustness (multi-round retraining curve).
  {
    std::string csv = "round,candidates,retained,pairs_built,strict_pct,attack_failed,dominance_violations\n";
    for (int r = 0; r <= ctx.cfg.rounds; ++r) {
      const RoundReport rep =
          RoundReport::from_json(nlohmann::json::parse(read_file(ctx.paths.round_report_file(r))));
      csv += std::to_string(rep.round) + "," + std::to_string(rep.candidates) + "," +
             std::to_string(rep.retained) + "," + std::to_string(rep.pairs_built) + "," +
             fmt_double(rep.strict_success_rate) + "," + (rep.attack_failed ? "1" : "0") + "," +
             std::to_string(rep.dominance_violations) + "\n";
      ej["rounds"].push_back(rep.to_json());
    }
    write_file(ctx.paths.rounds_file(), csv);
  }

  // Uncertainty-gold correlation on SFT-only and SFT+adversarial samples,
  // using the ensemble-std disagreement over the round-0 members.
  {
    std::vector<const RewardNet*> members;
    for (const RewardNet& rm : rms0) members.push_back(&rm);
    const auto u_std = [&](const Prompt& p, const Response& y) {
      return disagreement(members, p, y, DisagreementMode::kStd).value;
    };
    std::vector<double> u_sft, g_sft;
    std::string sft_csv = "u,gold\n";
    for (const RefItem& item : core.calib_refs) {
      const Prompt& p = core.world.prompt(item.prompt_id);
      u_sft.push_back(u_std(p, item.response));
      g_sft.push_back(gold_fn(p, item.response));
      sft_csv += fmt_double(u_sft.back()) + "," + fmt_double(g_sft.back()) + "\n";
    }
    write_file(ctx.paths.fig1_sft_file(), sft_csv);
    const double r_sft = pearson(u_sft, g_sft);
    ej["correlations"]["sft_only"] = r_sft;
    ej["correlations"]["n_sft"] = u_sft.size();

    const std::vector<AdvSample> retained0 = load_adv_dataset(ctx.paths.retained_file(0));
    std::string corr_csv = "set,pearson,n\n";
    corr_csv += "sft_only," + fmt_double(r_sft) + "," + std::to_string(u_sft.size()) + "\n";
    std::vector<double> u_mix = u_sft, g_mix = g_sft;
    std::string adv_csv = "u,gold\n";
    for (const AdvSample& s : retained0) {
      const Prompt& p = core.world.prompt(s.prompt_id);
      u_mix.push_back(u_std(p, s.response));
      g_mix.push_back(gold_fn(p, s.response));
      adv_csv += fmt_double(u_mix.back()) + "," + fmt_double(g_mix.back()) + "\n";
    }
    write_file(ctx.paths.fig1_adv_file(), adv_csv);
    if (!retained0.empty()) {
      const double r_mix = pearson(u_mix, g_mix);
      corr_csv += "sft_adv," + fmt_double(r_mix) + "," + std::to_string(u_mix.size()) + "\n";
      ej["correlations"]["sft_adv"] = r_mix;
      ej["correlations"]["n_adv"] = retained0.size();
    }
    write_file(ctx.paths.correlations_file(), corr_csv);
  }

  // References on the training prompts, shared by the budget sweep and the
  // mechanism ablations (both judge attacks that live on train prompts).
  const PromptReferences train_refs = sample_prompt_references(
      core.world.train_prompts, core.sft, ctx.cfg.eval.refs_per_prompt,
      derive_seed(ctx.seed, "train-refs"));

  // Pair-budget sweep: split the retained round-0 attacks in half, retrain the
  // RM with increasing numbers of pairs built from one half, and measure how
  // many of the held-out half's top attacks still strictly succeed. Judging
  // attacks whose own pairs entered training would only measure memorization;
  // the holdout measures how far each budget generalizes across the exploit
  // family. Budget 0 anchors the sweep with a retrain on unaugmented data.
  {
    std::vector<AdvSample> retained0 = load_adv_dataset(ctx.paths.retained_file(0));
    std::string budget_csv = "budget,pairs,judged,strict_pct\n";
    if (retained0.size() >= 2) {
      Rng split_rng = Rng::stream(ctx.seed, "budget-split");
      split_rng.shuffle(retained0);
      const std::size_t half = retained0.size() / 2;
      const std::vector<AdvSample> eligible(retained0.begin(), retained0.begin() + half);
      const std::vector<AdvSample> holdout(retained0.begin() + half, retained0.end());
      constexpr int kHoldoutJudgeCap = 256;
      const std::vector<const AdvSample*> judged = detail::top_by_z(holdout, kHoldoutJudgeCap);
      const PreferenceDataset original = load_dataset(ctx.paths.dataset_file());
      const ThresholdTable thresholds0 = round_thresholds(ctx, 0, core.world, core.sft, rms0[0]);
      std::vector<int> budgets = {0};
      budgets.insert(budgets.end(), ctx.cfg.eval.budget_sweep.begin(),
                     ctx.cfg.eval.budget_sweep.end());
      for (int budget : budgets) {
        PreferenceDataset data = original;
        std::size_t n_pairs = 0;
        if (budget > 0) {
          const PreferenceDataset pairs =
              build_adv_pairs(eligible, core.world, core.sft, rms0[0], thresholds0, budget,
                              derive_seed(ctx.seed, "budget-pairs", static_cast<std::uint64_t>(budget)),
                              ctx.cfg.attack);
          n_pairs = pairs.size();
          data.insert(data.end(), pairs.begin(), pairs.end());
        }
        RewardNet rm_b = train_rm(data, core.world.prompt_lookup(), core.world.proxy_features,
                                  core.world.proxy_arch(), ctx.cfg.rm.train(),
                                  derive_seed(ctx.seed, "rm-budget", static_cast<std::uint64_t>(budget)),
                                  "budget" + std::to_string(budget));
        calibrate(rm_b, core.calib_refs, core.world.prompt_lookup());
        const ScoreFn rmb_fn = [&](const Prompt& p, const Response& y) { return rm_b.score(p, y); };
        const ScoreReferences refs_b =
            build_score_references(train_refs, rmb_fn, gold_fn, core.world.prompt_lookup());
        int hits = 0;
        for (const AdvSample* s : judged) {
          const Prompt& p = core.world.prompt(s->prompt_id);
          if (judge_strict(s->prompt_id, rmb_fn(p, s->response), gold_fn(p, s->response), refs_b).strict)
            ++hits;
        }
        const double pct = success_rate(hits, static_cast<int>(judged.size())).pct;
        budget_csv += std::to_string(budget) + "," + std::to_string(n_pairs) + "," +
                      std::to_string(judged.size()) + "," + fmt_double(pct) + "\n";
        ej["budget_sweep"].push_back({{"budget", budget},
                                      {"pairs", n_pairs},
                                      {"judged", judged.size()},
                                      {"strict_pct", pct}});
      }
    }
    write_file(ctx.paths.budget_file(), budget_csv);
  }

  // Mechanism ablations against the round-0 RM, re-running the attack per
  // variant at a reduced matched step budget (eval.ablation_steps),
  // deliberately short of full convergence: once every variant's policy has
  // collapsed onto an exploit family, filtering and weighting no longer have
  // anything to separate. Two metrics per variant: strict-success yield over
  // the full pair budget, and strict-success rate over the pairs the variant
  // actually selected.
  {
    const ScoreReferences trefs =
        build_score_references(train_refs, rm1_fn, gold_fn, core.world.prompt_lookup());
    const int cap = ctx.cfg.attack.pair_budget;

    std::string csv = "variant,pool,selected,strict_hits,strict_yield_pct,strict_rate_pct\n";
    const auto emit = [&](const std::string& variant, const std::vector<AdvSample>& pool) {
      const std::vector<const AdvSample*> top = detail::top_by_z(pool, cap);
      int hits = 0;
      for (const AdvSample* s : top) {
        const Prompt& p = core.world.prompt(s->prompt_id);
        if (judge_strict(s->prompt_id, rm1_fn(p, s->response), gold_fn(p, s->response), trefs).strict)
          ++hits;
      }
      const double yield = 100.0 * static_cast<double>(hits) / static_cast<double>(cap);
      const double rate =
          top.empty() ? 0.0 : 100.0 * static_cast<double>(hits) / static_cast<double>(top.size());
      csv += variant + "," + std::to_string(pool.size()) + "," + std::to_string(top.size()) + "," +
             std::to_string(hits) + "," + fmt_double(yield) + "," + fmt_double(rate) + "\n";
      ej["ablations"].push_back({{"variant", variant},
                                 {"pool", pool.size()},
                                 {"selected", top.size()},
                                 {"strict_hits", hits},
                                 {"strict_yield_pct", yield},
                                 {"strict_rate_pct", rate}});
    };

    RLConfig ablation_rl = ctx.cfg.attack_rl;
    ablation_rl.max_steps = ctx.cfg.eval.ablation_steps;
    {
      const std::vector<AttackRun> runs = run_attack_with(core, rms0[0], rms0[1], ctx.cfg.attack,
                                                          ablation_rl, derive_seed(ctx.seed, "ablation", 0));
      const std::vector<AdvSample> pooled = pool_candidates(runs);
      emit("full", filter_candidates(pooled, true));
      emit("no_filter", filter_candidates(pooled, false));
    }
    {
      AttackConfig eq = ctx.cfg.attack;
      eq.lambda = 1.0;
      const std::vector<AttackRun> runs = run_attack_with(core, rms0[0], rms0[1], eq, ablation_rl,
                                                          derive_seed(ctx.seed, "ablation", 1));
      emit("equal_weights", filter_candidates(pool_candidates(runs), true));
    }
    {
      AttackConfig nothr = ctx.cfg.attack;
      nothr.use_threshold = false;
      const std::vector<AttackRun> runs = run_attack_with(core, rms0[0], rms0[1], nothr, ablation_rl,
                                                          derive_seed(ctx.seed, "ablation", 2));
      emit("no_threshold", filter_candidates(pool_candidates(runs), true));
    }
    write_file(ctx.paths.ablation_file(), csv);
  }

  // Downstream method summary for whichever policies have been trained.
  {
    std::string csv = "method,best_step,best_gold,final_gold,hacked,total_steps\n";
    for (const std::string& method : policy_methods()) {
      const std::filesystem::path cf = ctx.paths.policy_curve_file(method);
      if (!std::filesystem::exists(cf)) continue;
      const nlohmann::json cj = nlohmann::json::parse(read_file(cf));
      csv += method + "," + std::to_string(cj.at("best_step").get<int>()) + "," +
             fmt_double(cj.at("best_gold").get<double>()) + "," +
             fmt_double(cj.at("final_gold").get<double>()) + "," +
             (cj.at("hacked").get<bool>() ? "1" : "0") + "," +
             std::to_string(cj.at("total_steps").get<long>()) + "\n";
      ej["downstream"].push_back(cj);
    }
    write_file(ctx.paths.downstream_file(), csv);
  }

  write_file(ctx.paths.eval_json_file(), ej.dump(2) + "\n");
  ctx.manifest.record_artifact("evaluate:json", rel_path(ctx.paths, ctx.paths.eval_json_file()));
  ctx.manifest.record_artifact("evaluate:verdicts", rel_path(ctx.paths, ctx.paths.verdicts_file()));
  ctx.manifest.mark_done(stage);
  ctx.save_manifest();
}

// ---------------------------------------------------------------------------
// reproduce: the full pipeline per seed plus cross-seed aggregation.
// ---------------------------------------------------------------------------

inline void run_all_stages(StageContext& ctx) {
  run_gen_world(ctx);
  for (int r = 0; r <= ctx.cfg.rounds; ++r) run_round(ctx, r);
  for (const std::string& method : policy_methods()) run_train_policy(ctx, method);
  run_evaluate(ctx);
}

inline std::filesystem::path seed_dir(const std::filesystem::path& out, std::uint64_t seed) {
  return out / ("seed" + std::to_string(seed));
}

// Cross-seed means of the per-seed evaluation outputs, written both as CSVs
// and as one aggregate.json for downstream tooling.
inline void aggregate_runs(const ExperimentConfig& cfg, const std::filesystem::path& out,
                           const std::vector<std::uint64_t>& seeds) {
  const std::filesystem::path agg = out / "aggregate";
  std::filesystem::create_directories(agg);
  std::vector<nlohmann::json> evals;
  for (std::uint64_t s : seeds) {
    const RunPaths paths(seed_dir(out, s));
    evals.push_back(nlohmann::json::parse(read_file(paths.eval_json_file())));
  }
  const double n = static_cast<double>(seeds.size());
  nlohmann::json aj;
  aj["seeds"] = seeds;

  // mean and between-seed standard error of one numeric series
  const auto mean_se = [n](const std::vector<double>& xs) {
    double mu = 0.0;
    for (double x : xs) mu += x;
    mu /= n;
    double var = 0.0;
    for (double x : xs) var += (x - mu) * (x - mu);
    var = xs.size() > 1 ? var / (n - 1.0) : 0.0;
    return std::pair<double, double>(mu, std::sqrt(var / n));
  };

  {
    std::map<std::string, std::vector<double>> strict, standard;
    for (const nlohmann::json& e : evals)
      for (const nlohmann::json& row : e.at("summary")) {
        strict[row.at("method").get<std::string>()].push_back(row.at("strict_pct").get<double>());
        standard[row.at("method").get<std::string>()].push_back(row.at("standard_pct").get<double>());
      }
    std::string csv = "method,strict_mean,strict_se,standard_mean,standard_se,seeds\n";
    for (const auto& [method, xs] : strict) {
      const auto [sm, sse] = mean_se(xs);
      const auto [dm, dse] = mean_se(standard.at(method));
      csv += method + "," + fmt_double(sm) + "," + fmt_double(sse) + "," + fmt_double(dm) + "," +
             fmt_double(dse) + "," + std::to_string(xs.size()) + "\n";
      aj["summary_mean"].push_back({{"method", method},
                                    {"strict_mean", sm},
                                    {"strict_se", sse},
                                    {"standard_mean", dm},
                                    {"standard_se", dse}});
    }
    write_file(agg / "summary_mean.csv", csv);
  }
  {
    std::string all_csv = "seed,round,strict_pct,retained,pairs_built,attack_failed\n";
    std::map<int, std::vector<double>> by_round;
    for (std::size_t i = 0; i < evals.size(); ++i)
      for (const nlohmann::json& row : evals[i].at("rounds")) {
        const int r = row.at("round").get<int>();
        const double pct = row.at("strict_success_rate").get<double>();
        by_round[r].push_back(pct);
        all_csv += std::to_string(seeds[i]) + "," + std::to_string(r) + "," + fmt_double(pct) + "," +
                   std::to_string(row.at("retained").get<long>()) + "," +
                   std::to_string(row.at("pairs_built").get<long>()) + "," +
                   (row.at("attack_failed").get<bool>() ? "1" : "0") + "\n";
      }
    write_file(agg / "rounds_all.csv", all_csv);
    std::string csv = "round,strict_mean,strict_se\n";
    for (const auto& [r, xs] : by_round) {
      const auto [m, se] = mean_se(xs);
      csv += std::to_string(r) + "," + fmt_double(m) + "," + fmt_double(se) + "\n";
      aj["rounds_mean"].push_back({{"round", r}, {"strict_mean", m}, {"strict_se", se}});
    }
    write_file(agg / "rounds_mean.csv", csv);
  }
  {
    std::string all_csv = "seed,variant,pool,selected,strict_hits,strict_yield_pct,strict_rate_pct\n";
    std::map<std::string, std::vector<double>> yield_by, rate_by;
    for (std::size_t i = 0; i < evals.size(); ++i)
      for (const nlohmann::json& row : evals[i].at("ablations")) {
        const std::string v = row.at("variant").get<std::string>();
        const double y = row.at("strict_yield_pct").get<double>();
        const double rate = row.at("strict_rate_pct").get<double>();
        yield_by[v].push_back(y);
        rate_by[v].push_back(rate);
        all_csv += std::to_string(seeds[i]) + "," + v + "," +
                   std::to_string(row.at("pool").get<long>()) + "," +
                   std::to_string(row.at("selected").get<long>()) + "," +
                   std::to_string(row.at("strict_hits").get<int>()) + "," + fmt_double(y) + "," +
                   fmt_double(rate) + "\n";
      }
    write_file(agg / "ablations_all.csv", all_csv);
    std::string csv = "variant,strict_yield_mean,strict_yield_se,strict_rate_mean,strict_rate_se\n";
    for (const auto& [v, xs] : yield_by) {
      const auto [ym, yse] = mean_se(xs);
      const auto [rm, rse] = mean_se(rate_by.at(v));
      csv += v + "," + fmt_double(ym) + "," + fmt_double(yse) + "," + fmt_double(rm) + "," +
             fmt_double(rse) + "\n";
      aj["ablations_mean"].push_back({{"variant", v},
                                      {"strict_yield_mean", ym},
                                      {"strict_yield_se", yse},
                                      {"strict_rate_mean", rm},
                                      {"strict_rate_se", rse}});
    }
    write_file(agg / "ablations_mean.csv", csv);
  }
  {
    std::string csv = "seed,method,best_step,best_gold,final_gold,hacked,total_steps\n";
    for (std::size_t i = 0; i < evals.size(); ++i) {
      if (!evals[i].contains("downstream")) continue;
      for (const nlohmann::json& row : evals[i].at("downstream")) {
        csv += std::to_string(seeds[i]) + "," + row.at("method").get<std::string>() + "," +
               std::to_string(row.at("best_step").get<int>()) + "," +
               fmt_double(row.at("best_gold").get<double>()) + "," +
               fmt_double(row.at("final_gold").get<double>()) + "," +
               (row.at("hacked").get<bool>() ? "1" : "0") + "," +
               std::to_string(row.at("total_steps").get<long>()) + "\n";
        nlohmann::json dj = row;
        dj["seed"] = seeds[i];
        aj["downstream"].push_back(dj);
      }
    }
    write_file(agg / "downstream_all.csv", csv);
  }
  {
    std::string csv = "seed,sft_only,sft_adv\n";
    for (std::size_t i = 0; i < evals.size(); ++i) {
      const nlohmann::json& c = evals[i].at("correlations");
      csv += std::to_string(seeds[i]) + "," + fmt_double(c.at("sft_only").get<double>()) + ",";
      csv += c.contains("sft_adv") ? fmt_double(c.at("sft_adv").get<double>()) : std::string("");
      csv += "\n";
      nlohmann::json cj = c;
      cj["seed"] = seeds[i];
      aj["correlations"].push_back(cj);
    }
    write_file(agg / "correlations_all.csv", csv);
  }
  {
    std::map<int, std::vector<double>> by_budget;
    for (const nlohmann::json& e : evals) {
      if (!e.contains("budget_sweep")) continue;
      for (const nlohmann::json& row : e.at("budget_sweep"))
        by_budget[row.at("budget").get<int>()].push_back(row.at("strict_pct").get<double>());
    }
    std::string csv = "budget,strict_mean,strict_se\n";
    for (const auto& [b, xs] : by_budget) {
      const auto [m, se] = mean_se(xs);
      csv += std::to_string(b) + "," + fmt_double(m) + "," + fmt_double(se) + "\n";
      aj["budget_mean"].push_back({{"budget", b}, {"strict_mean", m}, {"strict_se", se}});
    }
    write_file(agg / "budget_mean.csv", csv);
  }
  write_file(agg / "aggregate.json", aj.dump(2) + "\n");
}

inline void run_reproduce(const ExperimentConfig& cfg, const std::filesystem::path& out,
                          std::optional<std::uint64_t> seed_override = std::nullopt) {
  const std::vector<std::uint64_t> seeds =
      seed_override ? std::vector<std::uint64_t>{*seed_override} : cfg.seeds;
  std::filesystem::create_directories(out);
  nlohmann::json rj;
  rj["config"] = config_to_json(cfg);
  rj["seeds"] = seeds;
  write_file(out / "reproduce.json", rj.dump(2) + "\n");
  for (std::uint64_t s : seeds) {
    StageContext ctx = open_run(cfg, s, seed_dir(out, s));
    run_all_stages(ctx);
  }
  aggregate_runs(cfg, out, seeds);
}

}  // namespace advrm
