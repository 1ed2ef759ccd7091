// Configuration, manifest, and pipeline-orchestration tests: config round
// trips and overrides, stage gating with actionable errors, resumability with
// byte-identical artifacts, and end-to-end reproduce determinism at a scale
// small enough for CI.

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "advrm/report.hpp"
#include "advrm/stages.hpp"

namespace advrm {
namespace {

namespace fs = std::filesystem;

ExperimentConfig micro_config() {
  ExperimentConfig cfg = default_config();
  cfg.world.train_prompts = 16;
  cfg.world.eval_prompts = 8;
  cfg.sft.epochs = 2;
  cfg.rm.epochs = 2;
  cfg.rm.n_pairs = 100;
  cfg.rm.calibration_size = 64;
  cfg.rl.max_steps = 4;
  cfg.rl.batch_size = 4;
  cfg.rl.k = 2;
  cfg.attack_rl.max_steps = 4;
  cfg.attack_rl.batch_size = 4;
  cfg.attack_rl.k = 2;
  cfg.attack.threshold_samples = 8;
  cfg.attack.pair_budget = 8;
  cfg.attack.policies = 2;
  cfg.eval.refs_per_prompt = 8;
  cfg.eval.token_pert_variants = 5;
  cfg.eval.attacks_per_prompt = 2;
  cfg.eval.budget_sweep = {4};
  cfg.eval.ablation_steps = 3;
  cfg.rounds = 1;
  cfg.seeds = {5};
  return cfg;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("advrm_harness_" + tag);
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// All regular files under root, keyed by relative path.
std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file())
      out[entry.path().lexically_relative(root).generic_string()] = slurp(entry.path());
  return out;
}

// --- configuration ---------------------------------------------------------

TEST(Config, JsonRoundTripPreservesEveryField) {
  ExperimentConfig cfg = micro_config();
  cfg.rl.kl_beta = 0.125;
  cfg.attack.lambda = 7.5;
  cfg.eval.budget_sweep = {3, 9};
  cfg.seeds = {11, 22};
  const ExperimentConfig back = config_from_json(config_to_json(cfg));
  EXPECT_EQ(config_to_json(back), config_to_json(cfg));
}

TEST(Config, UnknownTopLevelKeyRejected) {
  nlohmann::json j = config_to_json(default_config());
  j["bogus"] = 1;
  EXPECT_THROW(config_from_json(j), ConfigError);
}

TEST(Config, UnknownNestedKeyRejectedWithSectionName) {
  nlohmann::json j = config_to_json(default_config());
  j["rm"]["bogus"] = 1;
  try {
    config_from_json(j);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("rm.bogus"), std::string::npos) << e.what();
  }
}

TEST(Config, OverridesParseNumbersBoolsArraysStrings) {
  const ExperimentConfig cfg = config_with_overrides(
      default_config(), {"rl.kl_beta=0.2", "attack.use_filter=false", "eval.budget_sweep=[7,8]",
                         "out_dir=elsewhere", "rounds=3", "seeds=[9]"});
  EXPECT_DOUBLE_EQ(cfg.rl.kl_beta, 0.2);
  EXPECT_FALSE(cfg.attack.use_filter);
  EXPECT_EQ(cfg.eval.budget_sweep, (std::vector<int>{7, 8}));
  EXPECT_EQ(cfg.out_dir, "elsewhere");
  EXPECT_EQ(cfg.rounds, 3);
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{9}));
}

TEST(Config, BadOverridesRejected) {
  EXPECT_THROW(config_with_overrides(default_config(), {"no_equals_sign"}), ConfigError);
  EXPECT_THROW(config_with_overrides(default_config(), {"=5"}), ConfigError);
  EXPECT_THROW(config_with_overrides(default_config(), {"rm..epochs=5"}), ConfigError);
  // creating an unknown key via override is caught on re-parse
  EXPECT_THROW(config_with_overrides(default_config(), {"rm.bogus=5"}), ConfigError);
}

TEST(Config, ValidationCatchesDegenerateValues) {
  EXPECT_THROW(config_with_overrides(default_config(), {"rm.ensemble_k=1"}), ConfigError);
  EXPECT_THROW(config_with_overrides(default_config(), {"rounds=-1"}), ConfigError);
  EXPECT_THROW(config_with_overrides(default_config(), {"seeds=[]"}), ConfigError);
  EXPECT_THROW(config_with_overrides(default_config(), {"eval.hack_margin=0"}), ConfigError);
}

TEST(Config, LoadConfigRejectsMalformedJson) {
  TempDir tmp("badjson");
  write_file(tmp.path() / "c.json", "{not json");
  EXPECT_THROW(load_config(tmp.path() / "c.json"), ConfigError);
}

// --- manifest ---------------------------------------------------------------

TEST(Manifest, SaveLoadRoundTrip) {
  TempDir tmp("manifest");
  RunManifest m;
  m.config_snapshot = config_to_json(default_config());
  m.seed = 42;
  m.mark_done("gen-world");
  m.record_artifact("gen-world:dataset", "dataset.jsonl");
  m.save(tmp.path() / "manifest.json");
  const RunManifest back = RunManifest::load(tmp.path() / "manifest.json");
  EXPECT_EQ(back.seed, 42u);
  EXPECT_TRUE(back.done("gen-world"));
  EXPECT_EQ(back.artifacts.at("gen-world:dataset"), "dataset.jsonl");
  EXPECT_EQ(back.config_snapshot, m.config_snapshot);
}

TEST(Manifest, RequireNamesTheCommandThatCompletesTheStage) {
  RunManifest m;
  try {
    m.require("round0/rm", "round0/attack", "/nowhere");
    FAIL() << "expected StateError";
  } catch (const StateError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("round0/attack"), std::string::npos) << msg;
    EXPECT_NE(msg.find("advrm train-rm --stage 0"), std::string::npos) << msg;
  }
}

TEST(Manifest, RequireChecksArtifactExistence) {
  TempDir tmp("artifacts");
  RunManifest m;
  m.mark_done("gen-world");
  m.record_artifact("gen-world:dataset", "dataset.jsonl");
  EXPECT_THROW(m.require("gen-world", "round0/rm", tmp.path()), StateError);
  write_file(tmp.path() / "dataset.jsonl", "");
  EXPECT_NO_THROW(m.require("gen-world", "round0/rm", tmp.path()));
}

TEST(Manifest, StageCommandMapping) {
  EXPECT_EQ(stage_command("gen-world"), "advrm gen-world");
  EXPECT_EQ(stage_command("round2"), "advrm round --stage 2");
  EXPECT_EQ(stage_command("round1/pairs"), "advrm build-pairs --stage 1");
  EXPECT_EQ(stage_command("policy/rrm"), "advrm train-policy --stage rrm");
  EXPECT_EQ(stage_command("evaluate"), "advrm evaluate");
}

// --- stage gating and orchestration ------------------------------------------

TEST(Stages, OpenRunRejectsSeedAndConfigMismatch) {
  TempDir tmp("openrun");
  const ExperimentConfig cfg = micro_config();
  open_run(cfg, 5, tmp.path());
  EXPECT_NO_THROW(open_run(cfg, 5, tmp.path()));
  EXPECT_THROW(open_run(cfg, 6, tmp.path()), ConfigError);
  ExperimentConfig other = cfg;
  other.rounds = 0;
  EXPECT_THROW(open_run(other, 5, tmp.path()), ConfigError);
}

TEST(Stages, RoundRefusesToRunBeforeWorldExists) {
  TempDir tmp("gate1");
  StageContext ctx = open_run(micro_config(), 5, tmp.path());
  EXPECT_THROW(run_round_rm(ctx, 0), StateError);
  EXPECT_THROW(run_round(ctx, 0), StateError);
}

TEST(Stages, LaterRoundRefusesToRunBeforeEarlierPairs) {
  TempDir tmp("gate2");
  StageContext ctx = open_run(micro_config(), 5, tmp.path());
  run_gen_world(ctx);
  try {
    run_round_rm(ctx, 1);
    FAIL() << "expected StateError";
  } catch (const StateError& e) {
    EXPECT_NE(std::string(e.what()).find("round0/pairs"), std::string::npos) << e.what();
  }
}

TEST(Stages, RoundIndexOutOfRangeRejected) {
  TempDir tmp("gate3");
  StageContext ctx = open_run(micro_config(), 5, tmp.path());
  EXPECT_THROW(run_round_rm(ctx, -1), ConfigError);
  EXPECT_THROW(run_round_rm(ctx, 2), ConfigError);  // rounds=1 allows 0..1
}

TEST(Stages, EvaluateRefusesBeforeRoundsAndBaseline) {
  TempDir tmp("gate4");
  StageContext ctx = open_run(micro_config(), 5, tmp.path());
  run_gen_world(ctx);
  EXPECT_THROW(run_evaluate(ctx), StateError);
}

TEST(Stages, FullRoundProducesConsistentArtifacts) {
  TempDir tmp("round0");
  StageContext ctx = open_run(micro_config(), 5, tmp.path());
  run_gen_world(ctx);
  run_round(ctx, 0);

  // every retained candidate passed the filter it claims to have passed
  const std::vector<AdvSample> retained = load_adv_dataset(ctx.paths.retained_file(0));
  const std::vector<AdvSample> candidates = load_adv_dataset(ctx.paths.candidates_file(0));
  for (const AdvSample& s : retained) {
    EXPECT_TRUE(s.passed_filter);
    EXPECT_GT(s.z, 1.96);
  }
  EXPECT_LE(retained.size(), candidates.size());

  // pairs respect the budget and are marked as adversarial data
  const PreferenceDataset pairs = load_dataset(ctx.paths.pairs_file(0));
  EXPECT_LE(static_cast<int>(pairs.size()), ctx.cfg.attack.pair_budget);
  for (const PreferencePair& p : pairs) EXPECT_EQ(p.source, PairSource::kAdversarial);

  const RoundReport rep =
      RoundReport::from_json(nlohmann::json::parse(read_file(ctx.paths.round_report_file(0))));
  EXPECT_EQ(rep.round, 0);
  EXPECT_EQ(rep.retained, static_cast<long>(retained.size()));
  EXPECT_EQ(rep.pairs_built, static_cast<long>(pairs.size()));
  EXPECT_EQ(rep.candidates, static_cast<long>(candidates.size()));
  EXPECT_GE(rep.strict_success_rate, 0.0);
  EXPECT_LE(rep.strict_success_rate, 100.0);
}

TEST(Stages, PiecemealAndCompositeRoundsAreByteIdentical) {
  const ExperimentConfig cfg = micro_config();
  TempDir a("piecewise"), b("composite");
  {
    StageContext ctx = open_run(cfg, 5, a.path());
    run_gen_world(ctx);
    run_round_rm(ctx, 0);
    run_round_attack(ctx, 0);
    run_round_filter(ctx, 0);
    run_round_pairs(ctx, 0);
    run_round_report(ctx, 0);
  }
  {
    StageContext ctx = open_run(cfg, 5, b.path());
    run_gen_world(ctx);
    run_round(ctx, 0);
  }
  const auto ta = tree_bytes(a.path());
  const auto tb = tree_bytes(b.path());
  ASSERT_EQ(ta.size(), tb.size());
  for (const auto& [rel, bytes] : ta) {
    ASSERT_TRUE(tb.count(rel)) << rel;
    EXPECT_EQ(bytes, tb.at(rel)) << rel;
  }
}

TEST(Stages, CompletedStagesAreSkippedOnRerun) {
  TempDir tmp("skip");
  StageContext ctx = open_run(micro_config(), 5, tmp.path());
  run_gen_world(ctx);
  const auto before = fs::last_write_time(ctx.paths.dataset_file());
  run_gen_world(ctx);  // no-op: must not rewrite artifacts
  EXPECT_EQ(before, fs::last_write_time(ctx.paths.dataset_file()));
}

TEST(Stages, TrainPolicyWritesCurveSummary) {
  TempDir tmp("policy");
  StageContext ctx = open_run(micro_config(), 5, tmp.path());
  run_gen_world(ctx);
  run_round_rm(ctx, 0);
  run_train_policy(ctx, "baseline");
  const nlohmann::json cj =
      nlohmann::json::parse(read_file(ctx.paths.policy_curve_file("baseline")));
  EXPECT_EQ(cj.at("method"), "baseline");
  EXPECT_GE(cj.at("best_step").get<int>(), 0);
  EXPECT_GE(cj.at("total_steps").get<long>(), ctx.cfg.rl.max_steps);
  const std::vector<StepMetrics> trace = read_trace(ctx.paths.policy_trace_file("baseline"));
  EXPECT_EQ(static_cast<long>(trace.size()), cj.at("total_steps").get<long>());
  EXPECT_THROW(run_train_policy(ctx, "nonsense"), ConfigError);
}

TEST(Stages, EvaluateWritesAllTables) {
  TempDir tmp("edge");
  StageContext ctx = open_run(micro_config(), 5, tmp.path());
  run_all_stages(ctx);
  for (const fs::path p :
       {ctx.paths.verdicts_file(), ctx.paths.summary_file(), ctx.paths.rounds_file(),
        ctx.paths.correlations_file(), ctx.paths.fig1_sft_file(), ctx.paths.budget_file(),
        ctx.paths.ablation_file(), ctx.paths.downstream_file(), ctx.paths.eval_json_file()})
    EXPECT_TRUE(fs::exists(p)) << p;
  const nlohmann::json ej = nlohmann::json::parse(read_file(ctx.paths.eval_json_file()));
  EXPECT_TRUE(ej.contains("summary"));
  EXPECT_TRUE(ej.contains("rounds"));
  EXPECT_TRUE(ej.contains("correlations"));
  EXPECT_TRUE(ej.contains("ablations"));
  EXPECT_TRUE(ej.contains("downstream"));
  EXPECT_EQ(ej.at("rounds").size(), 2u);  // rounds 0 and 1

  // every policy method shows up in the downstream table
  const CsvTable t = read_csv(ctx.paths.downstream_file());
  EXPECT_EQ(t.rows.size(), policy_methods().size());
}

TEST(Report, RendersForCompletedRunAndEmptyDir) {
  TempDir tmp("report");
  StageContext ctx = open_run(micro_config(), 5, tmp.path() / "run");
  run_all_stages(ctx);
  render_report(tmp.path() / "run");
  const std::string md = read_file(tmp.path() / "run" / "report" / "index.md");
  EXPECT_NE(md.find("Attack success by method"), std::string::npos);
  EXPECT_NE(md.find("gold_curves.svg"), std::string::npos);
  EXPECT_EQ(md.find("MISSING"), std::string::npos);

  // empty directory: report still renders, sections flagged as missing
  fs::create_directories(tmp.path() / "empty");
  render_report(tmp.path() / "empty");
  const std::string empty_md = read_file(tmp.path() / "empty" / "report" / "index.md");
  EXPECT_NE(empty_md.find("MISSING"), std::string::npos);
}

TEST(Reproduce, WritesAggregateAndIsByteDeterministic) {
  const ExperimentConfig cfg = micro_config();
  TempDir a("rep_a"), b("rep_b");
  run_reproduce(cfg, a.path());
  run_reproduce(cfg, b.path());
  for (const char* f : {"summary_mean.csv", "rounds_all.csv", "rounds_mean.csv",
                        "ablations_all.csv", "ablations_mean.csv", "downstream_all.csv",
                        "correlations_all.csv", "budget_mean.csv", "aggregate.json"})
    ASSERT_TRUE(fs::exists(a.path() / "aggregate" / f)) << f;

  const auto ta = tree_bytes(a.path());
  const auto tb = tree_bytes(b.path());
  ASSERT_EQ(ta.size(), tb.size());
  for (const auto& [rel, bytes] : ta) EXPECT_EQ(bytes, tb.at(rel)) << rel;

  // resuming an already-finished run changes nothing
  run_reproduce(cfg, a.path());
  const auto ta2 = tree_bytes(a.path());
  EXPECT_EQ(ta, ta2);
}

}  // namespace
}  // namespace advrm
