#pragma once

#include <memory>
#include <vector>

#include "advrm/errors.hpp"
#include "advrm/features.hpp"
#include "advrm/reward_model.hpp"
#include "advrm/rng.hpp"
#include "advrm/tokens.hpp"

namespace advrm {

struct WorldConfig {
  int vocab = 32;
  int max_len = 16;
  int min_random_len = 4;
  int prompt_len = 6;
  int train_prompts = 256;
  int eval_prompts = 128;
  int embed_dim = 8;
  int bigram_buckets = 16;
  int gold_hidden = 64;
  double gold_gain = 4.0;
  int proxy_hidden = 32;
  // Gold spends fixed weight on sequence-degeneracy statistics. Proxies see
  // none of that block ("none"), only the embedding-extremity scalar
  // ("extremity"), or all of it ("all"). The default gives proxies a feature
  // that preference data barely constrains but that adversarial examples make
  // informative, so retraining on attacks can generalize across exploits.
  std::string proxy_stats = "extremity";

  StatsMode proxy_stats_mode() const {
    if (proxy_stats == "none") return StatsMode::kNone;
    if (proxy_stats == "extremity") return StatsMode::kExtremityOnly;
    if (proxy_stats == "all") return StatsMode::kAll;
    throw ConfigError("world: proxy_stats must be one of none/extremity/all, got '" + proxy_stats + "'");
  }

  void validate() const {
    if (vocab < 8) throw ConfigError("world: vocab must be >= 8");
    if (max_len < 1) throw ConfigError("world: max_len must be >= 1");
    if (train_prompts < 1 || eval_prompts < 0) throw ConfigError("world: need at least one prompt");
    if (prompt_len < 1 || prompt_len > max_len) throw ConfigError("world: prompt_len out of range");
    if (min_random_len < 1 || min_random_len > max_len) throw ConfigError("world: min_random_len out of range");
    proxy_stats_mode();
  }
};

// The synthetic language world: vocabulary, prompts, the frozen feature maps
// shared by every proxy reward model, and the frozen gold scorer. Prompt ids
// are global: train prompts come first, eval prompts after.
struct World {
  WorldConfig cfg;
  std::uint64_t seed = 0;
  std::vector<Prompt> train_prompts;
  std::vector<Prompt> eval_prompts;
  std::shared_ptr<const FeatureMap> proxy_features;
  std::shared_ptr<const FeatureMap> gold_features;
  RewardNet gold;

  const Prompt& prompt(int id) const {
    const int n_train = static_cast<int>(train_prompts.size());
    if (id >= 0 && id < n_train) return train_prompts[static_cast<std::size_t>(id)];
    const int j = id - n_train;
    if (j >= 0 && j < static_cast<int>(eval_prompts.size())) return eval_prompts[static_cast<std::size_t>(j)];
    throw ConfigError("unknown prompt id: " + std::to_string(id));
  }

  auto prompt_lookup() const {
    return [this](int id) -> const Prompt& { return prompt(id); };
  }

  ScoreMlpConfig proxy_arch() const {
    ScoreMlpConfig arch;
    arch.in_dim = proxy_features->dim();
    arch.hidden_dim = cfg.proxy_hidden;
    arch.act = Activation::kRelu;
    arch.linear_skip = true;
    return arch;
  }
};

// Uniform token sequence with uniform length in [min_random_len, max_len].
inline Response random_response(const WorldConfig& cfg, Rng& rng) {
  Response r;
  const int len = rng.int_range(cfg.min_random_len, cfg.max_len);
  r.tokens.reserve(static_cast<std::size_t>(len));
  for (int t = 0; t < len; ++t) r.tokens.push_back(static_cast<int>(rng.index(static_cast<std::size_t>(cfg.vocab))));
  if (len < cfg.max_len) r.end_marker = len;
  return r;
}

// Builds the frozen world. The gold model is a wider tanh net over its own
// feature map, with fixed negative skip weights on the degeneracy statistics:
// repetitive, over-concentrated, or length-extreme responses are genuinely
// low quality in this universe, while typical responses are dominated by the
// smooth random component. Proxies never see such responses during ordinary
// preference training, which is what opens the proxy-gold gap off
// distribution.
inline World build_world(const WorldConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  World w;
  w.cfg = cfg;
  w.seed = seed;

  Rng prompt_rng = Rng::stream(seed, "world-prompts");
  int next_id = 0;
  auto make_prompt = [&](std::vector<Prompt>& out) {
    Prompt p;
    p.id = next_id++;
    for (int t = 0; t < cfg.prompt_len; ++t)
      p.tokens.push_back(static_cast<int>(prompt_rng.index(static_cast<std::size_t>(cfg.vocab))));
    out.push_back(std::move(p));
  };
  for (int i = 0; i < cfg.train_prompts; ++i) make_prompt(w.train_prompts);
  for (int i = 0; i < cfg.eval_prompts; ++i) make_prompt(w.eval_prompts);

  FeatureMapConfig fm;
  fm.vocab = cfg.vocab;
  fm.max_len = cfg.max_len;
  fm.embed_dim = cfg.embed_dim;
  fm.bigram_buckets = cfg.bigram_buckets;
  // Proxies see at most a slice of the statistic block gold scores with, so
  // preference training alone cannot teach a proxy the full set of penalties
  // gold applies off distribution.
  FeatureMapConfig proxy_fm = fm;
  proxy_fm.stats = cfg.proxy_stats_mode();
  w.proxy_features = std::make_shared<FeatureMap>(proxy_fm, Rng::stream(seed, "proxy-features"));
  w.gold_features = std::make_shared<FeatureMap>(fm, Rng::stream(seed, "gold-features"));

  ScoreMlpConfig gold_arch;
  gold_arch.in_dim = w.gold_features->dim();
  gold_arch.hidden_dim = cfg.gold_hidden;
  gold_arch.act = Activation::kTanh;
  gold_arch.linear_skip = true;
  gold_arch.output_gain = cfg.gold_gain;

  w.gold.arch = gold_arch;
  w.gold.arch_tag = "gold";
  w.gold.feature_map = w.gold_features;
  w.gold.frozen = true;
  Rng gold_rng = Rng::stream(seed, "gold-init");
  init_score_mlp(w.gold.params, gold_arch, gold_rng);
  Array& skip = w.gold.params["skip"];
  std::fill(skip.begin(), skip.end(), 0.0);
  const int s = w.gold_features->stats_offset();
  skip[static_cast<std::size_t>(s + 1)] = -4.0;  // squared length deviation
  skip[static_cast<std::size_t>(s + 2)] = -3.0;  // unigram concentration
  skip[static_cast<std::size_t>(s + 3)] = -2.0;  // adjacent repeat rate
  skip[static_cast<std::size_t>(s + 4)] = -2.0;  // bigram concentration
  skip[static_cast<std::size_t>(s + 5)] = 1.0;   // distinct-token ratio
  skip[static_cast<std::size_t>(s + 6)] = -6.0;  // embedding extremity
  return w;
}

}  // namespace advrm
