#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include "advrm/adam.hpp"
#include "advrm/dataset.hpp"
#include "advrm/policy.hpp"
#include "advrm/reward_model.hpp"
#include "advrm/world.hpp"

namespace advrm {

struct SftConfig {
  int candidates_per_prompt = 32;   // random responses scored per prompt
  double keep_fraction = 0.25;      // top slice by gold score kept as demos
  int epochs = 30;
  int batch_size = 64;
  double lr = 1e-2;
  int policy_embed_dim = 8;
  int policy_hidden_dim = 24;
};

struct Demo {
  int prompt_id = 0;
  Response response;
};

// Builds the in-distribution anchor policy: score random responses with the
// gold model, keep the best slice per prompt, fit the autoregressive policy
// to them by maximum likelihood.
inline PolicyNet make_sft_policy(const World& world, const SftConfig& cfg, std::uint64_t seed) {
  if (cfg.candidates_per_prompt < 8) throw ConfigError("sft: candidates_per_prompt must be >= 8");
  if (cfg.keep_fraction <= 0.0 || cfg.keep_fraction > 1.0) throw ConfigError("sft: keep_fraction out of (0,1]");

  std::vector<Demo> demos;
  const int keep = std::max(1, static_cast<int>(cfg.candidates_per_prompt * cfg.keep_fraction));
  for (const Prompt& prompt : world.train_prompts) {
    Rng rng = Rng::stream(seed, "sft-candidates", static_cast<std::uint64_t>(prompt.id));
    std::vector<std::pair<double, Response>> scored;
    scored.reserve(static_cast<std::size_t>(cfg.candidates_per_prompt));
    for (int i = 0; i < cfg.candidates_per_prompt; ++i) {
      Response r = random_response(world.cfg, rng);
      const double g = world.gold.raw_score(prompt, r);
      scored.emplace_back(g, std::move(r));
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int i = 0; i < keep; ++i) demos.push_back({prompt.id, scored[static_cast<std::size_t>(i)].second});
  }

  PolicyConfig pcfg;
  pcfg.vocab = world.cfg.vocab;
  pcfg.max_len = world.cfg.max_len;
  pcfg.embed_dim = cfg.policy_embed_dim;
  pcfg.hidden_dim = cfg.policy_hidden_dim;
  Rng init_rng = Rng::stream(seed, "sft-init");
  PolicyNet policy = init_policy(pcfg, init_rng);

  Rng shuffle_rng = Rng::stream(seed, "sft-shuffle");
  std::vector<std::size_t> order(demos.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  AdamConfig adam;
  adam.lr = cfg.lr;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Gradients grads = Gradients::zeros_like(policy.params);
      const double coeff = -1.0 / static_cast<double>(end - start);  // descent on -mean logp
      for (std::size_t idx = start; idx < end; ++idx) {
        const Demo& d = demos[order[idx]];
        response_logp_backward(policy, world.prompt(d.prompt_id), d.response, coeff, grads);
      }
      adam_step(policy.params, grads, adam);
    }
  }
  return clone_policy(policy);  // anchor := the finished SFT parameters
}

// Gold-labeled preference pairs: two fresh policy samples per pair, the
// higher gold score is chosen. Gold ties are re-sampled; a pair whose budget
// runs out is skipped (count reported via skipped).
inline PreferenceDataset gen_preference_dataset(const World& world, const PolicyNet& sft, int n_pairs,
                                                std::uint64_t seed, int max_resample = 16,
                                                int* skipped = nullptr) {
  if (n_pairs < 1) throw ConfigError("preference dataset: n_pairs must be >= 1");
  PreferenceDataset ds;
  ds.reserve(static_cast<std::size_t>(n_pairs));
  int skips = 0;
  const std::size_t n_prompts = world.train_prompts.size();
  for (int i = 0; i < n_pairs; ++i) {
    const Prompt& prompt = world.train_prompts[static_cast<std::size_t>(i) % n_prompts];
    Rng rng = Rng::stream(seed, "pref-pairs", static_cast<std::uint64_t>(i));
    bool emitted = false;
    for (int attempt = 0; attempt < max_resample; ++attempt) {
      Response a = sample_response(sft, prompt, rng).response;
      Response b = sample_response(sft, prompt, rng).response;
      const double ga = world.gold.raw_score(prompt, a);
      const double gb = world.gold.raw_score(prompt, b);
      if (ga == gb) continue;
      PreferencePair p;
      p.prompt_id = prompt.id;
      p.source = PairSource::kOriginal;
      if (ga > gb) {
        p.chosen = std::move(a);
        p.rejected = std::move(b);
        p.gold_chosen = ga;
        p.gold_rejected = gb;
      } else {
        p.chosen = std::move(b);
        p.rejected = std::move(a);
        p.gold_chosen = gb;
        p.gold_rejected = ga;
      }
      ds.push_back(std::move(p));
      emitted = true;
      break;
    }
    if (!emitted) ++skips;
  }
  if (skipped) *skipped = skips;
  return ds;
}

// Global calibration set: responses drawn from the SFT policy across train
// prompts, used for (mu, sigma) score normalization.
inline ReferenceSet sample_reference_set(const World& world, const PolicyNet& sft, int n,
                                         std::uint64_t seed) {
  if (n < 2) throw ConfigError("reference set: need n >= 2");
  ReferenceSet refs;
  refs.reserve(static_cast<std::size_t>(n));
  const std::size_t n_prompts = world.train_prompts.size();
  for (int i = 0; i < n; ++i) {
    const Prompt& prompt = world.train_prompts[static_cast<std::size_t>(i) % n_prompts];
    Rng rng = Rng::stream(seed, "calib-refs", static_cast<std::uint64_t>(i));
    refs.push_back({prompt.id, sample_response(sft, prompt, rng).response});
  }
  return refs;
}

// Per-prompt SFT response banks backing strict-success z-scores.
struct PromptReferences {
  std::map<int, std::vector<Response>> by_prompt;
  int per_prompt = 0;

  const std::vector<Response>& at(int prompt_id) const {
    auto it = by_prompt.find(prompt_id);
    if (it == by_prompt.end()) throw StateError("prompt references: unknown prompt id");
    return it->second;
  }
};

inline PromptReferences sample_prompt_references(const std::vector<Prompt>& prompts, const PolicyNet& sft,
                                                 int per_prompt, std::uint64_t seed) {
  if (per_prompt < 8) throw ConfigError("prompt references: need >= 8 samples per prompt");
  PromptReferences out;
  out.per_prompt = per_prompt;
  for (const Prompt& prompt : prompts) {
    Rng rng = Rng::stream(seed, "prompt-refs", static_cast<std::uint64_t>(prompt.id));
    std::vector<Response>& bank = out.by_prompt[prompt.id];
    bank.reserve(static_cast<std::size_t>(per_prompt));
    for (int i = 0; i < per_prompt; ++i) bank.push_back(sample_response(sft, prompt, rng).response);
  }
  return out;
}

}  // namespace advrm
