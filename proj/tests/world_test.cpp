#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "advrm/policy.hpp"
#include "advrm/sft.hpp"
#include "advrm/world.hpp"

using namespace advrm;

namespace {

WorldConfig small_config() {
  WorldConfig cfg;
  cfg.train_prompts = 32;
  cfg.eval_prompts = 16;
  return cfg;
}

Response repeat_response(int token, int len, int max_len) {
  Response r;
  for (int i = 0; i < len; ++i) r.tokens.push_back(token);
  if (len < max_len) r.end_marker = len;
  return r;
}

}  // namespace

TEST(World, RandomResponsesRespectBounds) {
  WorldConfig cfg = small_config();
  Rng rng = Rng::stream(4, "bounds");
  for (int i = 0; i < 500; ++i) {
    const Response r = random_response(cfg, rng);
    ASSERT_GE(r.length(), cfg.min_random_len);
    ASSERT_LE(r.length(), cfg.max_len);
    for (int t : r.tokens) ASSERT_TRUE(t >= 0 && t < cfg.vocab);
    if (r.length() < cfg.max_len)
      ASSERT_EQ(r.end_marker, r.length());
    else
      ASSERT_EQ(r.end_marker, -1);
  }
}

TEST(World, BuildIsDeterministicInSeed) {
  const WorldConfig cfg = small_config();
  const World w1 = build_world(cfg, 99);
  const World w2 = build_world(cfg, 99);
  const World w3 = build_world(cfg, 100);
  EXPECT_EQ(w1.gold.params.fingerprint(), w2.gold.params.fingerprint());
  EXPECT_NE(w1.gold.params.fingerprint(), w3.gold.params.fingerprint());
  Rng rng = Rng::stream(1, "probe");
  for (int i = 0; i < 20; ++i) {
    const Response r = random_response(cfg, rng);
    const Prompt& p = w1.train_prompts[static_cast<std::size_t>(i) % w1.train_prompts.size()];
    EXPECT_EQ(w1.gold.raw_score(p, r), w2.gold.raw_score(p, r));
  }
  EXPECT_EQ(w1.train_prompts.size(), 32u);
  EXPECT_EQ(w1.eval_prompts.size(), 16u);
  for (const Prompt& p : w1.train_prompts) EXPECT_EQ(static_cast<int>(p.tokens.size()), cfg.prompt_len);
}

TEST(World, DegenerateConfigRejected) {
  WorldConfig cfg = small_config();
  cfg.vocab = 4;
  EXPECT_THROW(build_world(cfg, 1), ConfigError);
  cfg = small_config();
  cfg.max_len = 0;
  EXPECT_THROW(build_world(cfg, 1), ConfigError);
}

TEST(World, GoldArchitectureDiffersFromProxy) {
  const World w = build_world(small_config(), 7);
  const ScoreMlpConfig proxy = w.proxy_arch();
  EXPECT_NE(w.gold.arch.hidden_dim, proxy.hidden_dim);
  EXPECT_NE(static_cast<int>(w.gold.arch.act), static_cast<int>(proxy.act));
  EXPECT_TRUE(w.gold.frozen);
  EXPECT_EQ(w.gold.arch_tag, "gold");
  // Distinct pooling weights: the two feature maps disagree on some input.
  Rng rng = Rng::stream(2, "fm-probe");
  const Response r = random_response(w.cfg, rng);
  const Prompt& p = w.train_prompts[0];
  EXPECT_NE(w.proxy_features->features(p, r), w.gold_features->features(p, r));
}

TEST(World, GoldPenalizesDegenerateResponses) {
  const World w = build_world(small_config(), 11);
  Rng rng = Rng::stream(3, "degen");
  double random_mean = 0.0, repeat_mean = 0.0;
  int n = 0;
  for (const Prompt& p : w.train_prompts) {
    for (int i = 0; i < 8; ++i) {
      random_mean += w.gold.raw_score(p, random_response(w.cfg, rng));
      const int tok = static_cast<int>(rng.index(static_cast<std::size_t>(w.cfg.vocab)));
      repeat_mean += w.gold.raw_score(p, repeat_response(tok, w.cfg.max_len, w.cfg.max_len));
      ++n;
    }
  }
  random_mean /= n;
  repeat_mean /= n;
  EXPECT_LT(repeat_mean, random_mean - 1.0);
}

TEST(World, ProxyStatsVisibilityFollowsConfig) {
  // Default: proxies see only the extremity scalar of the statistic block.
  const World w = build_world(small_config(), 11);
  EXPECT_EQ(w.gold_features->dim(), w.proxy_features->dim() + FeatureMap::kNumStats - 1);
  EXPECT_NO_THROW(w.gold_features->stats_offset());
  EXPECT_THROW(w.proxy_features->stats_offset(), StateError);
  EXPECT_NO_THROW(w.proxy_features->extremity_offset());
  {
    // The exposed scalar is the same value gold sees in its full block.
    Prompt p;
    p.id = 0;
    p.tokens = {1, 2, 3};
    const Response rep = repeat_response(4, 8, small_config().max_len);
    const std::vector<double> pf = w.proxy_features->features(p, rep);
    EXPECT_GT(pf[static_cast<std::size_t>(w.proxy_features->extremity_offset())], 0.0);
  }

  WorldConfig cfg = small_config();
  cfg.proxy_stats = "all";
  const World sighted = build_world(cfg, 11);
  EXPECT_EQ(sighted.proxy_features->dim(), sighted.gold_features->dim());
  EXPECT_NO_THROW(sighted.proxy_features->stats_offset());

  cfg.proxy_stats = "none";
  const World blind = build_world(cfg, 11);
  EXPECT_EQ(blind.gold_features->dim(), blind.proxy_features->dim() + FeatureMap::kNumStats);
  EXPECT_THROW(blind.proxy_features->extremity_offset(), StateError);

  cfg.proxy_stats = "bogus";
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(FeatureMap, StatsBlockMatchesHandComputedValues) {
  FeatureMapConfig cfg;
  cfg.vocab = 32;
  cfg.max_len = 16;
  const FeatureMap fm(cfg, Rng::stream(5, "fm"));
  Prompt p;
  p.id = 0;
  p.tokens = {1, 2, 3};

  const Response rep = repeat_response(4, 8, cfg.max_len);
  std::vector<double> f = fm.features(p, rep);
  const int s = fm.stats_offset();
  EXPECT_DOUBLE_EQ(f[static_cast<std::size_t>(s) + 0], 0.5);            // length ratio 8/16
  EXPECT_DOUBLE_EQ(f[static_cast<std::size_t>(s) + 1], 0.0625);         // (0.5 - 0.75)^2
  EXPECT_DOUBLE_EQ(f[static_cast<std::size_t>(s) + 2], 1.0);            // single-token unigram mass
  EXPECT_DOUBLE_EQ(f[static_cast<std::size_t>(s) + 3], 1.0);            // every adjacent pair repeats
  EXPECT_DOUBLE_EQ(f[static_cast<std::size_t>(s) + 5], 1.0 / 8.0);      // 1 distinct of 8

  // Embedding extremity depends only on the token multiset proportions: a
  // pure repeat of one token pools to that token's embedding at any length.
  const std::vector<double> f4 = fm.features(p, repeat_response(4, 4, cfg.max_len));
  EXPECT_DOUBLE_EQ(f4[static_cast<std::size_t>(s) + 6], f[static_cast<std::size_t>(s) + 6]);
  EXPECT_GT(f[static_cast<std::size_t>(s) + 6], 0.0);

  Response distinct;
  distinct.tokens = {0, 1, 2, 3, 4, 5, 6, 7};
  distinct.end_marker = 8;
  f = fm.features(p, distinct);
  EXPECT_DOUBLE_EQ(f[static_cast<std::size_t>(s) + 2], 1.0 / 8.0);
  EXPECT_DOUBLE_EQ(f[static_cast<std::size_t>(s) + 3], 0.0);
  EXPECT_DOUBLE_EQ(f[static_cast<std::size_t>(s) + 5], 1.0);

  const Response empty;
  f = fm.features(p, empty);
  EXPECT_DOUBLE_EQ(f[static_cast<std::size_t>(s) + 0], 0.0);
  EXPECT_DOUBLE_EQ(f[static_cast<std::size_t>(s) + 1], 0.5625);
}

TEST(FeatureMap, RejectsOutOfRangeTokens) {
  FeatureMapConfig cfg;
  const FeatureMap fm(cfg, Rng::stream(6, "fm-range"));
  Prompt p;
  p.tokens = {0};
  Response r;
  r.tokens = {cfg.vocab};
  std::vector<double> out;
  EXPECT_THROW(fm.features(p, r, out), ConfigError);
}

TEST(Policy, SampledResponsesAreValidAndLogpConsistent) {
  PolicyConfig cfg;
  cfg.vocab = 16;
  cfg.max_len = 12;
  Rng init = Rng::stream(8, "pol-init");
  PolicyNet pol = init_policy(cfg, init);
  Prompt p;
  p.id = 0;
  p.tokens = {3, 1, 4};
  Rng rng = Rng::stream(9, "pol-sample");
  bool saw_eos = false;
  for (int i = 0; i < 300; ++i) {
    const PolicySample s = sample_response(pol, p, rng);
    ASSERT_LE(s.response.length(), cfg.max_len);
    for (int t : s.response.tokens) ASSERT_TRUE(t >= 0 && t < cfg.vocab);
    if (s.response.length() < cfg.max_len) {
      saw_eos = true;
      ASSERT_EQ(s.response.end_marker, s.response.length());
    }
    ASSERT_NEAR(s.logp, response_logp(pol, p, s.response), 1e-12);
  }
  EXPECT_TRUE(saw_eos);
}

TEST(Policy, TemperatureScalesSamplingConsistently) {
  PolicyConfig cfg;
  cfg.vocab = 8;
  cfg.max_len = 6;
  Rng init = Rng::stream(10, "pol-temp");
  PolicyNet pol = init_policy(cfg, init);
  Prompt p;
  p.tokens = {1};
  Rng rng = Rng::stream(11, "pol-temp-sample");
  for (int i = 0; i < 50; ++i) {
    const PolicySample s = sample_response(pol, p, rng, 0.7);
    ASSERT_NEAR(s.logp, response_logp(pol, p, s.response, 0.7), 1e-12);
  }
}

TEST(Policy, CloneSnapshotsAnchor) {
  PolicyConfig cfg;
  cfg.vocab = 8;
  cfg.max_len = 4;
  Rng init = Rng::stream(12, "pol-clone");
  PolicyNet pol = init_policy(cfg, init);
  PolicyNet c = clone_policy(pol);
  EXPECT_EQ(c.anchor->fingerprint(), pol.params.fingerprint());
  c.params["b_o"][0] += 1.0;
  EXPECT_NE(c.params.fingerprint(), c.anchor->fingerprint());
  EXPECT_EQ(c.anchor->fingerprint(), pol.params.fingerprint());
}

TEST(Policy, SaveLoadRoundTrip) {
  PolicyConfig cfg;
  cfg.vocab = 8;
  cfg.max_len = 5;
  Rng init = Rng::stream(13, "pol-io");
  const PolicyNet pol = init_policy(cfg, init);
  const auto base = std::filesystem::temp_directory_path() / "advrm_policy_io_test" / "pol";
  save_policy(pol, base);
  const PolicyNet back = load_policy(base);
  EXPECT_EQ(back.params.fingerprint(), pol.params.fingerprint());
  EXPECT_EQ(back.anchor->fingerprint(), pol.anchor->fingerprint());
  EXPECT_EQ(back.cfg.vocab, cfg.vocab);
  std::filesystem::remove_all(base.parent_path());
}

TEST(Sft, ClonedPolicyBeatsRandomOnGold) {
  WorldConfig wcfg = small_config();
  const World w = build_world(wcfg, 21);
  SftConfig cfg;
  cfg.candidates_per_prompt = 24;
  cfg.epochs = 12;
  const PolicyNet sft = make_sft_policy(w, cfg, 21);

  Rng rng = Rng::stream(22, "sft-eval");
  double sft_mean = 0.0, rand_mean = 0.0;
  int n = 0;
  for (const Prompt& p : w.eval_prompts) {
    for (int i = 0; i < 16; ++i) {
      sft_mean += w.gold.raw_score(p, sample_response(sft, p, rng).response);
      rand_mean += w.gold.raw_score(p, random_response(w.cfg, rng));
      ++n;
    }
  }
  sft_mean /= n;
  rand_mean /= n;
  EXPECT_GT(sft_mean, rand_mean);
}

TEST(Sft, DeterministicInSeedAndValidatesConfig) {
  const World w = build_world(small_config(), 23);
  SftConfig cfg;
  cfg.candidates_per_prompt = 16;
  cfg.epochs = 2;
  const PolicyNet a = make_sft_policy(w, cfg, 5);
  const PolicyNet b = make_sft_policy(w, cfg, 5);
  EXPECT_EQ(a.params.fingerprint(), b.params.fingerprint());

  SftConfig bad = cfg;
  bad.candidates_per_prompt = 4;
  EXPECT_THROW(make_sft_policy(w, bad, 5), ConfigError);
}

TEST(Sft, PreferencePairsAreGoldConsistent) {
  const World w = build_world(small_config(), 31);
  SftConfig cfg;
  cfg.candidates_per_prompt = 16;
  cfg.epochs = 3;
  const PolicyNet sft = make_sft_policy(w, cfg, 31);
  int skipped = -1;
  const PreferenceDataset ds = gen_preference_dataset(w, sft, 200, 31, 16, &skipped);
  EXPECT_EQ(static_cast<int>(ds.size()) + skipped, 200);
  for (const PreferencePair& pair : ds) {
    ASSERT_GT(pair.gold_chosen, pair.gold_rejected);
    ASSERT_EQ(pair.source, PairSource::kOriginal);
    ASSERT_FALSE(pair.chosen == pair.rejected);
    ASSERT_EQ(pair.gold_chosen, w.gold.raw_score(w.prompt(pair.prompt_id), pair.chosen));
  }
  // Round trip through the line-delimited dataset format.
  const auto path = std::filesystem::temp_directory_path() / "advrm_ds_test" / "pairs.jsonl";
  save_dataset(path, ds);
  const PreferenceDataset back = load_dataset(path);
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ASSERT_TRUE(back[i].chosen == ds[i].chosen);
    ASSERT_TRUE(back[i].rejected == ds[i].rejected);
    ASSERT_EQ(back[i].gold_chosen, ds[i].gold_chosen);
  }
  std::filesystem::remove_all(path.parent_path());
}

TEST(Sft, PromptReferencesCoverEveryPromptAtRequestedDepth) {
  const World w = build_world(small_config(), 41);
  SftConfig cfg;
  cfg.candidates_per_prompt = 16;
  cfg.epochs = 2;
  const PolicyNet sft = make_sft_policy(w, cfg, 41);
  const PromptReferences refs = sample_prompt_references(w.eval_prompts, sft, 16, 41);
  EXPECT_EQ(refs.by_prompt.size(), w.eval_prompts.size());
  for (const Prompt& p : w.eval_prompts) EXPECT_EQ(refs.at(p.id).size(), 16u);
  EXPECT_THROW(refs.at(-5), StateError);
  EXPECT_THROW(sample_prompt_references(w.eval_prompts, sft, 4, 41), ConfigError);
}
