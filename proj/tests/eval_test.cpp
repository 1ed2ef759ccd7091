#include "advrm/eval.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "advrm/world.hpp"

using namespace advrm;

namespace {

WorldConfig small_config() {
  WorldConfig cfg;
  cfg.train_prompts = 16;
  cfg.eval_prompts = 8;
  return cfg;
}

struct EvalEnv {
  World world;
  PolicyNet sft;

  EvalEnv() {
    world = build_world(small_config(), 55);
    SftConfig sft_cfg;
    sft_cfg.epochs = 8;
    sft = make_sft_policy(world, sft_cfg, 55);
  }
};

const EvalEnv& env() {
  static EvalEnv e;
  return e;
}

}  // namespace

TEST(StandardSuccess, RequiresProxyUpAndGoldDown) {
  EXPECT_TRUE(success_standard(1.0, 0.5, -1.0, 0.0));
  EXPECT_FALSE(success_standard(0.4, 0.5, -1.0, 0.0));  // proxy did not rise
  EXPECT_FALSE(success_standard(1.0, 0.5, 0.5, 0.0));   // gold did not fall
  EXPECT_FALSE(success_standard(0.5, 0.5, -1.0, 0.0));  // ties lose
  EXPECT_FALSE(success_standard(0.5, 0.5, 0.0, 0.0));   // identity response loses
}

TEST(StrictSuccess, ZScoreRuleMatchesHandCases) {
  ScoreReferences refs;
  refs.rm1[0] = UncertaintyRef{0.0, 1.0};
  refs.gold[0] = UncertaintyRef{0.0, 1.0};

  // Proxy above the SFT mean, gold significantly below: success.
  AttackVerdict v = judge_strict(0, 0.5, -2.5, refs);
  EXPECT_TRUE(v.strict);
  EXPECT_DOUBLE_EQ(v.z_rm1, 0.5);
  EXPECT_DOUBLE_EQ(v.z_gold, -2.5);

  // Gold drop not significant.
  v = judge_strict(0, 0.5, -1.0, refs);
  EXPECT_FALSE(v.strict);

  // Proxy below the SFT mean.
  v = judge_strict(0, -0.1, -3.0, refs);
  EXPECT_FALSE(v.strict);

  // Boundary: z_gold exactly -1.96 is not significant.
  v = judge_strict(0, 0.5, -1.96, refs);
  EXPECT_FALSE(v.strict);

  EXPECT_THROW(judge_strict(99, 0.0, 0.0, refs), StateError);
}

TEST(ScoreReferences, MatchPerPromptSampleStats) {
  const EvalEnv& e = env();
  std::vector<Prompt> prompts(e.world.eval_prompts.begin(), e.world.eval_prompts.begin() + 3);
  const PromptReferences prompt_refs = sample_prompt_references(prompts, e.sft, 16, 44);

  const ScoreFn rm1 = [&](const Prompt& p, const Response& r) {
    return e.world.gold.raw_score(p, r);  // any deterministic scorer works here
  };
  const ScoreFn gold = [&](const Prompt& p, const Response& r) {
    return static_cast<double>(r.length());
  };
  const ScoreReferences refs = build_score_references(prompt_refs, rm1, gold, e.world.prompt_lookup());
  ASSERT_EQ(refs.rm1.size(), 3u);
  ASSERT_EQ(refs.gold.size(), 3u);

  const int pid = prompts[1].id;
  std::vector<double> lens;
  for (const Response& r : prompt_refs.at(pid)) lens.push_back(static_cast<double>(r.length()));
  double mu = 0.0;
  for (double v : lens) mu += v;
  mu /= lens.size();
  double var = 0.0;
  for (double v : lens) var += (v - mu) * (v - mu);
  var /= lens.size();
  EXPECT_NEAR(refs.gold_at(pid).mean, mu, 1e-12);
  EXPECT_NEAR(refs.gold_at(pid).stddev, std::sqrt(var), 1e-12);
}

TEST(SuccessRateStat, MatchesBinomialFormula) {
  const SuccessRate r = success_rate(50, 100);
  EXPECT_DOUBLE_EQ(r.pct, 50.0);
  EXPECT_DOUBLE_EQ(r.se, 5.0);

  const SuccessRate zero = success_rate(0, 10);
  EXPECT_DOUBLE_EQ(zero.pct, 0.0);
  EXPECT_DOUBLE_EQ(zero.se, 0.0);

  EXPECT_THROW(success_rate(1, 0), ConfigError);
  EXPECT_THROW(success_rate(5, 3), ConfigError);
}

TEST(Pearson, PerfectCorrelationAndErrors) {
  const std::vector<double> x = {1.0, 2.0, 3.0, 4.0};
  const std::vector<double> y_up = {2.0, 4.0, 6.0, 8.0};
  const std::vector<double> y_down = {1.0, 0.0, -1.0, -2.0};
  EXPECT_NEAR(pearson(x, y_up), 1.0, 1e-12);
  EXPECT_NEAR(pearson(x, y_down), -1.0, 1e-12);

  const std::vector<double> flat = {3.0, 3.0, 3.0, 3.0};
  EXPECT_THROW(pearson(x, flat), NumericError);
  const std::vector<double> shorter = {1.0, 2.0};
  EXPECT_THROW(pearson(x, shorter), ConfigError);
}

TEST(Pearson, UncorrelatedIsSmall) {
  Rng rng = Rng::stream(12, "pearson-test", 0);
  std::vector<double> x(4000), y(4000);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.normal();
    y[i] = rng.normal();
  }
  EXPECT_LT(std::abs(pearson(x, y)), 0.05);
}

TEST(EnsembleObjective, MeanAndPessimisticModes) {
  const std::vector<double> scores = {1.0, 3.0};
  EXPECT_DOUBLE_EQ(ensemble_objective(scores, 0.0), 2.0);
  // Population std of {1, 3} is 1, so lambda = 0.5 subtracts 0.5.
  EXPECT_DOUBLE_EQ(ensemble_objective(scores, 0.5), 1.5);
  const std::vector<double> one = {1.0};
  EXPECT_THROW(ensemble_objective(one, 0.0), ConfigError);
}

TEST(RrmAugment, MultipliesSizeWithForeignRejected) {
  const EvalEnv& e = env();
  int skipped = 0;
  const PreferenceDataset data = gen_preference_dataset(e.world, e.sft, 40, 66, 16, &skipped);
  const auto gold_raw = [&](int prompt_id, const Response& r) {
    return e.world.gold.raw_score(e.world.prompt(prompt_id), r);
  };
  const PreferenceDataset aug = rrm_augment(data, 3, 66, gold_raw);
  ASSERT_EQ(aug.size(), data.size() * 3);
  for (std::size_t i = 0; i < data.size(); ++i) EXPECT_EQ(aug[i].source, data[i].source);
  for (std::size_t i = data.size(); i < aug.size(); ++i) {
    const PreferencePair& p = aug[i];
    EXPECT_EQ(p.source, PairSource::kRrmAugmented);
    EXPECT_DOUBLE_EQ(p.gold_rejected, gold_raw(p.prompt_id, p.rejected));
    // The transplant came from some other prompt's chosen response.
    bool found_foreign = false;
    for (const PreferencePair& src : data)
      if (src.prompt_id != p.prompt_id && src.chosen == p.rejected) found_foreign = true;
    EXPECT_TRUE(found_foreign);
  }
}

TEST(RrmAugment, DeterministicAndErrorCases) {
  const EvalEnv& e = env();
  const PreferenceDataset data = gen_preference_dataset(e.world, e.sft, 20, 67);
  const auto gold_raw = [&](int prompt_id, const Response& r) {
    return e.world.gold.raw_score(e.world.prompt(prompt_id), r);
  };
  const PreferenceDataset a = rrm_augment(data, 2, 5, gold_raw);
  const PreferenceDataset b = rrm_augment(data, 2, 5, gold_raw);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_EQ(a[i].rejected.tokens, b[i].rejected.tokens);

  PreferenceDataset single;
  single.push_back(data.front());
  single.push_back(data.front());
  EXPECT_THROW(rrm_augment(single, 2, 5, gold_raw), ConfigError);
  EXPECT_NO_THROW(rrm_augment(single, 1, 5, gold_raw));
  EXPECT_THROW(rrm_augment(PreferenceDataset{}, 2, 5, gold_raw), ConfigError);
}

TEST(BestOfN, PicksHighestScoringSample) {
  const EvalEnv& e = env();
  std::vector<Prompt> prompts = {e.world.eval_prompts[0], e.world.eval_prompts[1]};
  const ScoreFn by_length = [](const Prompt&, const Response& r) {
    return static_cast<double>(r.length());
  };
  const std::map<int, Response> picks = best_of_n_attack(e.sft, prompts, by_length, 6, 321);
  ASSERT_EQ(picks.size(), 2u);

  // Re-draw the same stream and confirm the pick dominates all six samples.
  for (const Prompt& p : prompts) {
    Rng rng = Rng::stream(321, "best-of-n", static_cast<std::uint64_t>(p.id));
    int max_len = -1;
    for (int i = 0; i < 6; ++i)
      max_len = std::max(max_len, sample_response(e.sft, p, rng).response.length());
    EXPECT_EQ(picks.at(p.id).length(), max_len);
  }
  EXPECT_THROW(best_of_n_attack(e.sft, prompts, by_length, 0, 321), ConfigError);
}

TEST(BestOfN, DeterministicAcrossCalls) {
  const EvalEnv& e = env();
  std::vector<Prompt> prompts = {e.world.eval_prompts[2]};
  const ScoreFn scorer = [&](const Prompt& p, const Response& r) {
    return e.world.gold.raw_score(p, r);
  };
  const auto a = best_of_n_attack(e.sft, prompts, scorer, 4, 9);
  const auto b = best_of_n_attack(e.sft, prompts, scorer, 4, 9);
  EXPECT_EQ(a.at(prompts[0].id).tokens, b.at(prompts[0].id).tokens);
}

TEST(TokenPerturbation, NeverScoresBelowStart) {
  const EvalEnv& e = env();
  const Prompt& p = e.world.eval_prompts[0];
  Rng rng = Rng::stream(3, "pert-start", 0);
  const Response start = random_response(e.world.cfg, rng);
  const ScoreFn scorer = [&](const Prompt& pr, const Response& r) {
    return e.world.gold.raw_score(pr, r);
  };
  const Response best = token_perturbation_attack(start, p, scorer, 50, 3, e.world.cfg.vocab, 3);
  EXPECT_GE(scorer(p, best), scorer(p, start));
  EXPECT_EQ(best.tokens.size(), start.tokens.size());  // substitutions only

  // Edit budget: the winner differs from the start in at most max_edits slots.
  int diffs = 0;
  for (std::size_t i = 0; i < start.tokens.size(); ++i)
    if (best.tokens[i] != start.tokens[i]) ++diffs;
  EXPECT_LE(diffs, 3);
}

TEST(TokenPerturbation, ErrorCases) {
  const EvalEnv& e = env();
  const Prompt& p = e.world.eval_prompts[0];
  const ScoreFn scorer = [](const Prompt&, const Response&) { return 0.0; };
  Response empty;
  EXPECT_THROW(token_perturbation_attack(empty, p, scorer, 10, 2, 32, 1), ConfigError);
  Response ok;
  ok.tokens = {1, 2, 3};
  EXPECT_THROW(token_perturbation_attack(ok, p, scorer, 0, 2, 32, 1), ConfigError);
  EXPECT_THROW(token_perturbation_attack(ok, p, scorer, 10, 2, 1, 1), ConfigError);
}

TEST(HackingCurve, FindsPeakAndCollapse) {
  std::vector<CurvePoint> trace(5);
  const double gold[] = {0.0, 0.6, 0.9, 0.5, 0.3};
  for (int i = 0; i < 5; ++i) {
    trace[static_cast<std::size_t>(i)].step = i;
    trace[static_cast<std::size_t>(i)].mean_gold_reward = gold[i];
  }
  const HackingCurveReport r = hacking_curve_report(trace, 0.25);
  EXPECT_EQ(r.best_step, 2);
  EXPECT_DOUBLE_EQ(r.best_gold, 0.9);
  EXPECT_DOUBLE_EQ(r.final_gold, 0.3);
  EXPECT_TRUE(r.hacked);
}

TEST(HackingCurve, MonotoneRunIsNotHacked) {
  std::vector<CurvePoint> trace(4);
  for (int i = 0; i < 4; ++i) {
    trace[static_cast<std::size_t>(i)].step = i;
    trace[static_cast<std::size_t>(i)].mean_gold_reward = 0.1 * i;
  }
  const HackingCurveReport r = hacking_curve_report(trace, 0.25);
  EXPECT_EQ(r.best_step, 3);  // later step wins ties with >= rule
  EXPECT_FALSE(r.hacked);
}

TEST(HackingCurve, TiesGoToLaterStepAndSinglePointWorks) {
  std::vector<CurvePoint> trace(3);
  trace[0].step = 0;
  trace[0].mean_gold_reward = 0.5;
  trace[1].step = 1;
  trace[1].mean_gold_reward = 0.5;
  trace[2].step = 2;
  trace[2].mean_gold_reward = 0.4;
  EXPECT_EQ(hacking_curve_report(trace, 0.25).best_step, 1);

  std::vector<CurvePoint> one(1);
  one[0].step = 7;
  one[0].mean_gold_reward = 1.0;
  const HackingCurveReport r = hacking_curve_report(one, 0.25);
  EXPECT_EQ(r.best_step, 7);
  EXPECT_FALSE(r.hacked);
  EXPECT_THROW(hacking_curve_report({}, 0.25), ConfigError);
}

TEST(Verdicts, CsvRoundTripAndSummary) {
  std::vector<AttackVerdict> verdicts;
  for (int i = 0; i < 4; ++i) {
    AttackVerdict v;
    v.prompt_id = i;
    v.method = i < 2 ? "advrm" : "token_pert";
    v.standard = i % 2 == 0;
    v.strict = i == 0;
    v.z_rm1 = 0.5 * i;
    v.z_gold = -1.0 * i;
    verdicts.push_back(v);
  }
  const std::filesystem::path path = std::filesystem::temp_directory_path() / "advrm_verdicts.csv";
  write_verdicts(path, verdicts);
  const std::vector<AttackVerdict> back = read_verdicts(path);
  std::filesystem::remove(path);
  ASSERT_EQ(back.size(), 4u);
  EXPECT_EQ(back[2].method, "token_pert");
  EXPECT_TRUE(back[0].strict);
  EXPECT_FALSE(back[1].standard);
  EXPECT_DOUBLE_EQ(back[3].z_gold, -3.0);

  const std::vector<MethodSummary> summary = summarize_verdicts(back);
  ASSERT_EQ(summary.size(), 2u);  // alphabetical: advrm, token_pert
  EXPECT_EQ(summary[0].method, "advrm");
  EXPECT_EQ(summary[0].n, 2);
  EXPECT_DOUBLE_EQ(summary[0].strict.pct, 50.0);
  EXPECT_DOUBLE_EQ(summary[1].strict.pct, 0.0);
  EXPECT_DOUBLE_EQ(summary[1].standard.pct, 50.0);
}
