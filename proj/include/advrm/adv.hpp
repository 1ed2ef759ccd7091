#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <vector>

#include <json.hpp>

#include "advrm/policy_rl.hpp"
#include "advrm/reward_model.hpp"
#include "advrm/sft.hpp"
#include "advrm/world.hpp"

namespace advrm {

struct AttackConfig {
  double lambda = 10.0;          // weight on the second RM in the attack reward
  double c = -25.0;              // below-threshold penalty; that branch returns r1 + c
  int threshold_samples = 64;    // SFT samples per prompt when computing T(x)
  int pair_budget = 1000;        // adversarial preference pairs added per round
  // Independent adversarial policies trained per round. Each tends to lock
  // onto one exploit family, so several policies give the retraining data the
  // coverage a single run lacks.
  int policies = 3;
  bool use_filter = true;        // off reproduces the no-filtering ablation
  bool use_threshold = true;     // off removes the piecewise branch entirely
  int max_chosen_attempts = 64;  // SFT re-samples allowed per pair

  void validate() const {
    if (lambda <= 0.0) throw ConfigError("attack: lambda must be > 0");
    if (threshold_samples < 8) throw ConfigError("attack: threshold_samples must be >= 8");
    if (pair_budget < 1) throw ConfigError("attack: pair_budget must be >= 1");
    if (policies < 1) throw ConfigError("attack: policies must be >= 1");
    if (max_chosen_attempts < 1) throw ConfigError("attack: max_chosen_attempts must be >= 1");
  }
};

// Attack candidate: one sampled (prompt, response) with both proxy scores,
// the weighted-difference uncertainty, its z-score against the SFT
// uncertainty reference, and the filter verdict.
struct AdvSample {
  int prompt_id = -1;
  Response response;
  double r1 = 0.0;  // normalized target-RM score
  double r2 = 0.0;  // normalized second-member score
  double u = 0.0;   // r1 - lambda * r2
  double z = 0.0;   // z-score of u against the SFT reference
  bool passed_filter = false;
};

// Mean normalized target-RM score over fresh SFT responses to one prompt.
inline double threshold_T(const Prompt& prompt, const PolicyNet& sft, const RewardNet& rm1,
                          int n_samples, std::uint64_t seed) {
  if (n_samples < 8) throw ConfigError("threshold: need >= 8 samples");
  Rng rng = Rng::stream(seed, "threshold", static_cast<std::uint64_t>(prompt.id));
  double sum = 0.0;
  for (int i = 0; i < n_samples; ++i)
    sum += rm1.score(prompt, sample_response(sft, prompt, rng).response);
  return sum / static_cast<double>(n_samples);
}

struct ThresholdTable {
  std::map<int, double> value;

  double at(int prompt_id) const {
    auto it = value.find(prompt_id);
    if (it == value.end()) throw StateError("threshold table: unknown prompt id");
    return it->second;
  }
};

inline ThresholdTable compute_thresholds(const std::vector<Prompt>& prompts, const PolicyNet& sft,
                                         const RewardNet& rm1, int n_samples, std::uint64_t seed) {
  ThresholdTable table;
  for (const Prompt& p : prompts) table.value[p.id] = threshold_T(p, sft, rm1, n_samples, seed);
  return table;
}

struct AdvReward {
  double value = 0.0;
  bool constrained = false;  // true when the below-threshold penalty branch fired
};

// Piecewise attack reward: above the SFT threshold the policy is paid for
// disagreement (r1 - lambda * r2); below it the reward collapses to r1 + c so
// that staying plausible under the target RM is always preferable.
inline AdvReward adv_reward(double r1, double r2, double threshold, const AttackConfig& cfg) {
  AdvReward out;
  if (!cfg.use_threshold || r1 > threshold) {
    out.value = r1 - cfg.lambda * r2;
  } else {
    out.value = r1 + cfg.c;
    out.constrained = true;
  }
  return out;
}

// SFT reference statistics for the weighted-difference uncertainty.
template <typename PromptLookup>
inline UncertaintyRef uncertainty_reference(const ReferenceSet& refs, const RewardNet& rm1,
                                            const RewardNet& rm2, double lambda,
                                            PromptLookup&& prompt_of) {
  std::vector<double> values;
  values.reserve(refs.size());
  for (const RefItem& item : refs) {
    const Prompt& p = prompt_of(item.prompt_id);
    values.push_back(rm1.score(p, item.response) - lambda * rm2.score(p, item.response));
  }
  return uncertainty_ref_from_values(values);
}

struct AttackStepStats {
  int step = 0;
  double mean_r1 = 0.0;
  double mean_r2 = 0.0;
};

struct AttackRun {
  PolicyNet policy;
  std::vector<AdvSample> candidates;       // every rollout sample, all steps
  std::vector<StepMetrics> trace;          // train reward / gold / length / kl
  std::vector<AttackStepStats> rm_trace;   // per-step mean r1 / r2
  bool aborted = false;
  // Piecewise-dominance bookkeeping: per prompt, the smallest above-threshold
  // reward and the largest penalty-branch reward seen during training.
  std::map<int, double> min_case1;
  std::map<int, double> max_case2;

  int dominance_violations() const {
    int violations = 0;
    for (const auto& [pid, c2] : max_case2) {
      auto it = min_case1.find(pid);
      if (it != min_case1.end() && c2 >= it->second) ++violations;
    }
    return violations;
  }
};

// Trains the adversarial policy from the SFT anchor against the constrained
// piecewise reward, recording every sampled response as an attack candidate.
inline AttackRun train_adversarial_policy(const World& world, const PolicyNet& sft, const RewardNet& rm1,
                                          const RewardNet& rm2, const ThresholdTable& thresholds,
                                          const UncertaintyRef& uref, const AttackConfig& atk,
                                          const RLConfig& rl, std::uint64_t seed) {
  atk.validate();
  AttackRun run;
  run.policy = clone_policy(sft);

  // train_policy calls reward_fn and then the observer on the same sample, so
  // the scores computed for the reward can be reused for candidate records.
  struct LastScores {
    double r1 = 0.0, r2 = 0.0;
    bool constrained = false;
  } last;

  const bool gold_normalized = world.gold.calibrated();
  RewardFn reward = [&](const Prompt& prompt, const Response& response) {
    last.r1 = rm1.score(prompt, response);
    last.r2 = rm2.score(prompt, response);
    const AdvReward r = adv_reward(last.r1, last.r2, thresholds.at(prompt.id), atk);
    last.constrained = r.constrained;
    return r.value;
  };
  RewardFn gold = [&](const Prompt& prompt, const Response& response) {
    return world.gold.score(prompt, response, gold_normalized);
  };

  std::map<int, AttackStepStats> by_step;
  SampleObserver observer = [&](int step, const Prompt& prompt, const Response& response) {
    AdvSample s;
    s.prompt_id = prompt.id;
    s.response = response;
    s.r1 = last.r1;
    s.r2 = last.r2;
    s.u = last.r1 - atk.lambda * last.r2;
    s.z = uncertainty_zscore(s.u, uref);
    s.passed_filter = last.r1 > thresholds.at(prompt.id) && s.z > 1.96;
    run.candidates.push_back(std::move(s));

    const double reward_value = last.constrained ? last.r1 + atk.c : last.r1 - atk.lambda * last.r2;
    if (last.constrained) {
      auto [it, fresh] = run.max_case2.try_emplace(prompt.id, reward_value);
      if (!fresh) it->second = std::max(it->second, reward_value);
    } else {
      auto [it, fresh] = run.min_case1.try_emplace(prompt.id, reward_value);
      if (!fresh) it->second = std::min(it->second, reward_value);
    }
    AttackStepStats& st = by_step[step];
    st.step = step;
    st.mean_r1 += last.r1;
    st.mean_r2 += last.r2;
  };

  const TrainPolicyResult res =
      train_policy(run.policy, reward, gold, world.train_prompts, rl, seed, observer);
  run.trace = res.trace;
  run.aborted = res.aborted;
  const double denom = static_cast<double>(rl.batch_size * rl.k);
  for (auto& [step, st] : by_step) {
    st.mean_r1 /= denom;
    st.mean_r2 /= denom;
    run.rm_trace.push_back(st);
  }
  return run;
}

// Retains filtered candidates (or everything when the filter is ablated),
// deduplicates exact (prompt, response) repeats, and orders the result by
// (prompt_id asc, z desc, tokens) so downstream selection is deterministic.
inline std::vector<AdvSample> filter_candidates(const std::vector<AdvSample>& candidates,
                                                bool use_filter = true) {
  std::vector<AdvSample> kept;
  std::set<std::pair<int, std::vector<int>>> seen;
  for (const AdvSample& s : candidates) {
    if (use_filter && !s.passed_filter) continue;
    if (seen.emplace(s.prompt_id, s.response.tokens).second) kept.push_back(s);
  }
  std::sort(kept.begin(), kept.end(), [](const AdvSample& a, const AdvSample& b) {
    if (a.prompt_id != b.prompt_id) return a.prompt_id < b.prompt_id;
    if (a.z != b.z) return a.z > b.z;
    return a.response.tokens < b.response.tokens;
  });
  return kept;
}

// Pairs each retained attack (rejected) with a fresh SFT response whose
// target-RM score clears the prompt threshold (chosen). Selection under the
// budget is by highest z. Prompts where no qualifying SFT response appears
// within the attempt budget are dropped and counted.
inline PreferenceDataset build_adv_pairs(const std::vector<AdvSample>& retained, const World& world,
                                         const PolicyNet& sft, const RewardNet& rm1,
                                         const ThresholdTable& thresholds, int budget, std::uint64_t seed,
                                         const AttackConfig& atk, int* dropped = nullptr) {
  if (budget < 1) throw ConfigError("adv pairs: budget must be >= 1");
  std::vector<const AdvSample*> by_z;
  by_z.reserve(retained.size());
  for (const AdvSample& s : retained) by_z.push_back(&s);
  std::sort(by_z.begin(), by_z.end(), [](const AdvSample* a, const AdvSample* b) {
    if (a->z != b->z) return a->z > b->z;
    if (a->prompt_id != b->prompt_id) return a->prompt_id < b->prompt_id;
    return a->response.tokens < b->response.tokens;
  });

  PreferenceDataset pairs;
  std::map<int, Rng> chosen_rng;
  int drops = 0;
  for (const AdvSample* s : by_z) {
    if (static_cast<int>(pairs.size()) >= budget) break;
    const Prompt& prompt = world.prompt(s->prompt_id);
    auto it = chosen_rng.find(s->prompt_id);
    if (it == chosen_rng.end())
      it = chosen_rng.emplace(s->prompt_id, Rng::stream(seed, "adv-chosen", static_cast<std::uint64_t>(s->prompt_id))).first;
    bool found = false;
    for (int attempt = 0; attempt < atk.max_chosen_attempts && !found; ++attempt) {
      Response candidate = sample_response(sft, prompt, it->second).response;
      if (candidate == s->response) continue;
      if (rm1.score(prompt, candidate) <= thresholds.at(s->prompt_id)) continue;
      PreferencePair pair;
      pair.prompt_id = s->prompt_id;
      pair.chosen = std::move(candidate);
      pair.rejected = s->response;
      pair.source = PairSource::kAdversarial;
      pair.gold_chosen = world.gold.raw_score(prompt, pair.chosen);
      pair.gold_rejected = world.gold.raw_score(prompt, pair.rejected);
      pairs.push_back(std::move(pair));
      found = true;
    }
    if (!found) ++drops;
  }
  if (dropped) *dropped = drops;
  return pairs;
}

// Line-delimited retained-candidate records; the preference-pair schema's
// response side plus the attack statistics.
inline void save_adv_dataset(const std::filesystem::path& path, const std::vector<AdvSample>& samples) {
  std::string out;
  for (const AdvSample& s : samples) {
    out += "{\"prompt_id\": " + std::to_string(s.prompt_id);
    out += ", \"tokens\": " + tokens_to_string(s.response.tokens);
    out += ", \"r1\": " + fmt_double(s.r1);
    out += ", \"r2\": " + fmt_double(s.r2);
    out += ", \"u\": " + fmt_double(s.u);
    out += ", \"z\": " + fmt_double(s.z);
    out += ", \"passed_filter\": ";
    out += s.passed_filter ? "true" : "false";
    out += "}\n";
  }
  write_file(path, out);
}

inline std::vector<AdvSample> load_adv_dataset(const std::filesystem::path& path) {
  std::vector<AdvSample> samples;
  for (const std::string& line : read_lines(path)) {
    const nlohmann::json j = nlohmann::json::parse(line);
    AdvSample s;
    s.prompt_id = j.at("prompt_id").get<int>();
    s.response.tokens = j.at("tokens").get<std::vector<int>>();
    s.r1 = j.at("r1").get<double>();
    s.r2 = j.at("r2").get<double>();
    s.u = j.at("u").get<double>();
    s.z = j.at("z").get<double>();
    s.passed_filter = j.at("passed_filter").get<bool>();
    samples.push_back(std::move(s));
  }
  return samples;
}

inline void write_attack_trace(const std::filesystem::path& path,
                               const std::vector<AttackStepStats>& trace) {
  std::string out = "step,mean_r1,mean_r2\n";
  for (const AttackStepStats& s : trace)
    out += std::to_string(s.step) + "," + fmt_double(s.mean_r1) + "," + fmt_double(s.mean_r2) + "\n";
  write_file(path, out);
}

inline std::vector<AttackStepStats> read_attack_trace(const std::filesystem::path& path) {
  std::vector<AttackStepStats> trace;
  const std::vector<std::string> lines = read_lines(path);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    AttackStepStats s;
    if (std::sscanf(lines[i].c_str(), "%d,%lf,%lf", &s.step, &s.mean_r1, &s.mean_r2) != 3)
      throw StateError("attack trace: bad row '" + lines[i] + "'");
    trace.push_back(s);
  }
  return trace;
}

struct RoundReport {
  int round = -1;
  long candidates = 0;
  long retained = 0;
  long pairs_built = 0;
  double strict_success_rate = 0.0;  // eval-prompt strict rate against this round's RM
  bool attack_failed = false;        // empty filtered set: multi-round stop signal
  int dominance_violations = 0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"round", round},
                          {"candidates", candidates},
                          {"retained", retained},
                          {"pairs_built", pairs_built},
                          {"strict_success_rate", strict_success_rate},
                          {"attack_failed", attack_failed},
                          {"dominance_violations", dominance_violations}};
  }

  static RoundReport from_json(const nlohmann::json& j) {
    RoundReport r;
    r.round = j.at("round").get<int>();
    r.candidates = j.at("candidates").get<long>();
    r.retained = j.at("retained").get<long>();
    r.pairs_built = j.at("pairs_built").get<long>();
    r.strict_success_rate = j.at("strict_success_rate").get<double>();
    r.attack_failed = j.at("attack_failed").get<bool>();
    r.dominance_violations = j.at("dominance_violations").get<int>();
    return r;
  }
};

}  // namespace advrm
