#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "advrm/adam.hpp"
#include "advrm/io.hpp"
#include "advrm/policy.hpp"
#include "advrm/tokens.hpp"

namespace advrm {

struct RLConfig {
  double kl_beta = 0.05;
  double lr = 1e-3;
  int batch_size = 64;     // prompts per step
  int k = 4;               // rollouts per prompt; leave-one-out needs >= 2
  double temperature = 1.0;
  int max_steps = 300;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints

  void validate() const {
    if (kl_beta < 0.0) throw ConfigError("rl: kl_beta must be >= 0");
    if (k < 2) throw ConfigError("rl: k must be >= 2");
    if (batch_size < 1 || max_steps < 0) throw ConfigError("rl: degenerate batch/steps");
    if (lr <= 0.0) throw ConfigError("rl: lr must be > 0");
    if (temperature <= 0.0) throw ConfigError("rl: temperature must be > 0");
  }
};

// Leave-one-out advantages: A_i = r_i - mean(r_j, j != i), computed as a sum
// of pairwise differences so identical rewards give exact zeros and a common
// shift cancels exactly.
inline std::vector<double> rloo_advantages(std::span<const double> rewards) {
  const std::size_t k = rewards.size();
  if (k < 2) throw ConfigError("rloo: need k >= 2 rewards");
  std::vector<double> adv(k);
  const double denom = static_cast<double>(k - 1);
  for (std::size_t i = 0; i < k; ++i) {
    double diff = 0.0;
    for (std::size_t j = 0; j < k; ++j) diff += rewards[i] - rewards[j];
    adv[i] = diff / denom;
  }
  return adv;
}

// Sequence-level KL penalty folded into the scalar reward; in expectation
// under the policy this equals reward - kl_beta * KL(policy || anchor).
inline double kl_penalized_reward(double reward, double logp_policy, double logp_anchor, double kl_beta) {
  return reward - kl_beta * (logp_policy - logp_anchor);
}

struct StepMetrics {
  int step = 0;
  double mean_train_reward = 0.0;  // raw objective reward, before the KL term
  double mean_gold_reward = 0.0;
  double mean_length = 0.0;
  double mean_kl = 0.0;  // mean per-sample logp gap to the anchor
};

using RewardFn = std::function<double(const Prompt&, const Response&)>;
using SampleObserver = std::function<void(int step, const Prompt&, const Response&)>;
using CheckpointFn = std::function<void(int step, const PolicyNet&)>;

struct TrainPolicyResult {
  std::vector<StepMetrics> trace;
  bool aborted = false;  // non-finite loss; parameters rolled back to the last good step
  int steps_done = 0;
};

// REINFORCE with a leave-one-out baseline. Each step samples k responses for
// each of batch_size prompts (cycled deterministically), shapes rewards with
// the sequence KL penalty, and takes one Adam step on the descent gradient of
// -mean_i A_i log pi(y_i | x). `start_step` continues a previous run: step
// indices, RNG streams, and optimizer state line up with an uninterrupted run.
// Call-order contract: reward_fn runs exactly once per sample, immediately
// before the observer sees that same sample.
inline TrainPolicyResult train_policy(PolicyNet& policy, const RewardFn& reward_fn, const RewardFn& gold_fn,
                                      const std::vector<Prompt>& prompts, const RLConfig& cfg,
                                      std::uint64_t seed, const SampleObserver& observer = nullptr,
                                      const CheckpointFn& checkpoint = nullptr, int start_step = 0) {
  cfg.validate();
  if (!reward_fn) throw ConfigError("rl: reward_fn required");
  if (prompts.empty()) throw ConfigError("rl: no prompts");
  TrainPolicyResult result;
  AdamConfig adam;
  adam.lr = cfg.lr;
  const std::size_t n_prompts = prompts.size();
  const int total = cfg.batch_size * cfg.k;

  std::vector<double> shaped(static_cast<std::size_t>(cfg.k));
  for (int step = start_step; step < cfg.max_steps; ++step) {
    const ParamStore snapshot = policy.params;
    Gradients grads = Gradients::zeros_like(policy.params);
    StepMetrics m;
    m.step = step;
    bool bad = false;

    struct Rollout {
      const Prompt* prompt;
      Response response;
      double logp, logp_anchor, raw;
    };
    std::vector<Rollout> rollouts;
    rollouts.reserve(static_cast<std::size_t>(total));
    for (int slot = 0; slot < cfg.batch_size && !bad; ++slot) {
      const Prompt& prompt = prompts[(static_cast<std::size_t>(step) * cfg.batch_size + slot) % n_prompts];
      for (int i = 0; i < cfg.k; ++i) {
        const std::uint64_t entity =
            (static_cast<std::uint64_t>(step) << 24) ^ (static_cast<std::uint64_t>(slot) << 8) ^
            static_cast<std::uint64_t>(i);
        Rng rng = Rng::stream(seed, "rl-rollout", entity);
        PolicySample s = sample_response(policy, prompt, rng, cfg.temperature);
        const double raw = reward_fn(prompt, s.response);
        const double lpa = response_logp(policy, prompt, s.response, cfg.temperature, policy.anchor.get());
        if (!std::isfinite(raw) || !std::isfinite(s.logp) || !std::isfinite(lpa)) {
          bad = true;
          break;
        }
        if (observer) observer(step, prompt, s.response);
        m.mean_train_reward += raw;
        m.mean_gold_reward += gold_fn ? gold_fn(prompt, s.response) : 0.0;
        m.mean_length += static_cast<double>(s.response.length());
        m.mean_kl += s.logp - lpa;
        rollouts.push_back({&prompt, std::move(s.response), s.logp, lpa, raw});
      }
    }
    if (!bad) {
      const double inv_total = 1.0 / static_cast<double>(total);
      for (int slot = 0; slot < cfg.batch_size; ++slot) {
        const std::size_t base = static_cast<std::size_t>(slot) * cfg.k;
        for (int i = 0; i < cfg.k; ++i) {
          const Rollout& r = rollouts[base + static_cast<std::size_t>(i)];
          shaped[static_cast<std::size_t>(i)] =
              kl_penalized_reward(r.raw, r.logp, r.logp_anchor, cfg.kl_beta);
        }
        const std::vector<double> adv = rloo_advantages(shaped);
        for (int i = 0; i < cfg.k; ++i) {
          const Rollout& r = rollouts[base + static_cast<std::size_t>(i)];
          const double coeff = -adv[static_cast<std::size_t>(i)] * inv_total;
          if (coeff != 0.0)
            response_logp_backward(policy, *r.prompt, r.response, coeff, grads, cfg.temperature);
        }
      }
      if (!grads.finite()) bad = true;
    }
    if (bad) {
      policy.params = snapshot;
      result.aborted = true;
      break;
    }
    adam_step(policy.params, grads, adam);
    if (!policy.params.finite()) {
      policy.params = snapshot;
      result.aborted = true;
      break;
    }
    m.mean_train_reward /= total;
    m.mean_gold_reward /= total;
    m.mean_length /= total;
    m.mean_kl /= total;
    result.trace.push_back(m);
    result.steps_done = step + 1;
    if (checkpoint && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
      checkpoint(step + 1, policy);
  }
  return result;
}

inline void write_trace(const std::filesystem::path& path, const std::vector<StepMetrics>& trace) {
  std::string out = "step,mean_train_reward,mean_gold_reward,mean_length,mean_kl\n";
  for (const StepMetrics& m : trace) {
    out += std::to_string(m.step);
    out += ',';
    out += fmt_double(m.mean_train_reward);
    out += ',';
    out += fmt_double(m.mean_gold_reward);
    out += ',';
    out += fmt_double(m.mean_length);
    out += ',';
    out += fmt_double(m.mean_kl);
    out += '\n';
  }
  write_file(path, out);
}

inline std::vector<StepMetrics> read_trace(const std::filesystem::path& path) {
  std::vector<StepMetrics> trace;
  const std::vector<std::string> lines = read_lines(path);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    StepMetrics m;
    if (std::sscanf(lines[i].c_str(), "%d,%lf,%lf,%lf,%lf", &m.step, &m.mean_train_reward,
                    &m.mean_gold_reward, &m.mean_length, &m.mean_kl) != 5)
      throw StateError("trace: malformed line in " + path.string());
    trace.push_back(m);
  }
  return trace;
}

}  // namespace advrm
