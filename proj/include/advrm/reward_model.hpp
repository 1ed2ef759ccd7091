#pragma once

#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "advrm/adam.hpp"
#include "advrm/categorical.hpp"
#include "advrm/dataset.hpp"
#include "advrm/errors.hpp"
#include "advrm/features.hpp"
#include "advrm/io.hpp"
#include "advrm/mlp.hpp"
#include "advrm/params.hpp"
#include "advrm/rng.hpp"
#include "advrm/tokens.hpp"

namespace advrm {

// Bradley-Terry scorer over featurized (prompt, response) pairs. Raw scores
// are used for training; normalized scores ((raw - mu) / sigma, calibrated on
// a fixed SFT reference set) are used for every downstream comparison.
struct RewardNet {
  ScoreMlpConfig arch;
  std::string arch_tag;
  std::shared_ptr<const FeatureMap> feature_map;
  ParamStore params;
  double mu = 0.0;
  double sigma = 0.0;  // 0 = not calibrated
  std::uint64_t train_seed = 0;
  bool frozen = false;

  bool calibrated() const { return sigma > 0.0; }

  double raw_score(const Prompt& prompt, const Response& response) const {
    thread_local std::vector<double> feats;
    feature_map->features(prompt, response, feats);
    return score_mlp_forward(params, arch, feats);
  }

  double score(const Prompt& prompt, const Response& response, bool normalized = true) const {
    const double raw = raw_score(prompt, response);
    if (!normalized) return raw;
    if (!calibrated()) throw StateError("reward net '" + arch_tag + "' not calibrated");
    return (raw - mu) / sigma;
  }

  double normalize(double raw) const {
    if (!calibrated()) throw StateError("reward net '" + arch_tag + "' not calibrated");
    return (raw - mu) / sigma;
  }
};

struct BtLossResult {
  double loss = 0.0;
  Gradients grads;
  double pair_accuracy = 0.0;  // fraction of pairs with positive margin
};

// Mean negative log-sigmoid of the chosen-minus-rejected margin on raw
// scores, with gradients for the reward net parameters.
template <typename PromptLookup>
inline BtLossResult bt_loss_and_grads(const RewardNet& rm, std::span<const PreferencePair> batch,
                                      PromptLookup&& prompt_of) {
  if (batch.empty()) throw ConfigError("bt loss: empty batch");
  BtLossResult res;
  res.grads = Gradients::zeros_like(rm.params);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<double> fc, fr;
  int correct = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const PreferencePair& pair = batch[i];
    const Prompt& prompt = prompt_of(pair.prompt_id);
    rm.feature_map->features(prompt, pair.chosen, fc);
    rm.feature_map->features(prompt, pair.rejected, fr);
    const double sc = score_mlp_forward(rm.params, rm.arch, fc);
    const double sr = score_mlp_forward(rm.params, rm.arch, fr);
    if (!std::isfinite(sc) || !std::isfinite(sr))
      throw NumericError("bt loss: non-finite score at pair " + std::to_string(i));
    const double margin = sc - sr;
    if (margin > 0.0) correct++;
    res.loss += softplus(-margin) * inv_n;
    // d(loss_i)/d(margin) = sigmoid(margin) - 1
    const double up = (sigmoid(margin) - 1.0) * inv_n;
    score_mlp_backward(rm.params, rm.arch, fc, up, res.grads);
    score_mlp_backward(rm.params, rm.arch, fr, -up, res.grads);
  }
  res.pair_accuracy = static_cast<double>(correct) / static_cast<double>(batch.size());
  return res;
}

struct TrainRmConfig {
  int epochs = 1;
  int batch_size = 128;
  double lr = 1e-2;
  AdamConfig adam_rest;  // beta1/beta2/eps; lr taken from `lr`
  // Test hook: when non-empty, this exact visit order is used instead of the
  // seeded shuffle (single epoch only).
  std::vector<int> explicit_order;
};

// One (or more) epochs of shuffled minibatch Adam on the Bradley-Terry loss,
// starting from a fresh seed-derived initialization.
template <typename PromptLookup>
inline RewardNet train_rm(const PreferenceDataset& dataset, PromptLookup&& prompt_of,
                          std::shared_ptr<const FeatureMap> feature_map, const ScoreMlpConfig& arch,
                          const TrainRmConfig& cfg, std::uint64_t seed, const std::string& tag = "proxy") {
  if (dataset.empty()) throw ConfigError("train_rm: empty dataset");
  RewardNet rm;
  rm.arch = arch;
  rm.arch.in_dim = feature_map->dim();
  rm.arch_tag = tag;
  rm.feature_map = std::move(feature_map);
  rm.train_seed = seed;
  Rng init_rng = Rng::stream(seed, "rm-init");
  init_score_mlp(rm.params, rm.arch, init_rng);

  AdamConfig adam = cfg.adam_rest;
  adam.lr = cfg.lr;
  Rng shuffle_rng = Rng::stream(seed, "rm-shuffle");
  std::vector<int> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  const int epochs = cfg.explicit_order.empty() ? cfg.epochs : 1;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    if (!cfg.explicit_order.empty())
      order = cfg.explicit_order;
    else
      shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<PreferencePair> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(dataset[static_cast<std::size_t>(order[i])]);
      BtLossResult res = bt_loss_and_grads(rm, std::span<const PreferencePair>(batch), prompt_of);
      adam_step(rm.params, res.grads, adam);
    }
  }
  return rm;
}

struct RefItem {
  int prompt_id = -1;
  Response response;
};

using ReferenceSet = std::vector<RefItem>;

// Affine post-hoc calibration: normalized scores of the reference set get
// mean 0 and standard deviation 1.
template <typename PromptLookup>
inline void calibrate(RewardNet& rm, const ReferenceSet& refs, PromptLookup&& prompt_of) {
  if (refs.size() < 2) throw ConfigError("calibrate: need at least 2 reference samples");
  double sum = 0.0, sumsq = 0.0;
  for (const RefItem& item : refs) {
    const double s = rm.raw_score(prompt_of(item.prompt_id), item.response);
    sum += s;
    sumsq += s * s;
  }
  const double n = static_cast<double>(refs.size());
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  if (!(var > 0.0)) throw StateError("calibrate: zero score variance on reference set");
  rm.mu = mean;
  rm.sigma = std::sqrt(var);
}

enum class DisagreementMode { kStd, kWeightedDiff };

struct EnsembleStats {
  std::vector<double> member_scores;  // normalized
  double value = 0.0;
  DisagreementMode mode = DisagreementMode::kStd;
};

// Ensemble disagreement over normalized member scores. kStd is the
// population standard deviation; kWeightedDiff is score_1 - lambda * score_2.
inline EnsembleStats disagreement(std::span<const RewardNet* const> members, const Prompt& prompt,
                                  const Response& response, DisagreementMode mode,
                                  std::optional<double> lambda = std::nullopt) {
  if (members.size() < 2) throw ConfigError("disagreement: need >= 2 ensemble members");
  if (mode == DisagreementMode::kStd && lambda.has_value())
    throw ConfigError("disagreement: lambda is not a std-mode parameter");
  if (mode == DisagreementMode::kWeightedDiff && !lambda.has_value())
    throw ConfigError("disagreement: weighted_diff requires lambda");
  EnsembleStats stats;
  stats.mode = mode;
  for (const RewardNet* rm : members) stats.member_scores.push_back(rm->score(prompt, response, true));
  if (mode == DisagreementMode::kStd) {
    double mean = 0.0;
    for (double s : stats.member_scores) mean += s;
    mean /= static_cast<double>(stats.member_scores.size());
    double var = 0.0;
    for (double s : stats.member_scores) var += (s - mean) * (s - mean);
    var /= static_cast<double>(stats.member_scores.size());
    stats.value = std::sqrt(var);
  } else {
    stats.value = stats.member_scores[0] - *lambda * stats.member_scores[1];
  }
  return stats;
}

struct UncertaintyRef {
  double mean = 0.0;
  double stddev = 0.0;

  bool valid() const { return stddev > 0.0; }
};

inline double uncertainty_zscore(double u, const UncertaintyRef& ref) {
  if (!ref.valid()) throw StateError("uncertainty z-score: reference not calibrated");
  return (u - ref.mean) / ref.stddev;
}

inline UncertaintyRef uncertainty_ref_from_values(std::span<const double> values) {
  if (values.size() < 2) throw ConfigError("uncertainty reference: need >= 2 values");
  double sum = 0.0, sumsq = 0.0;
  for (double v : values) {
    sum += v;
    sumsq += v * v;
  }
  const double n = static_cast<double>(values.size());
  UncertaintyRef ref;
  ref.mean = sum / n;
  const double var = sumsq / n - ref.mean * ref.mean;
  ref.stddev = var > 0.0 ? std::sqrt(var) : 0.0;
  return ref;
}

inline void save_reward_net(const RewardNet& rm, const std::filesystem::path& base) {
  write_file(base.string() + ".ckpt", rm.params.save_string());
  nlohmann::json j;
  j["arch_tag"] = rm.arch_tag;
  j["hidden_dim"] = rm.arch.hidden_dim;
  j["activation"] = activation_name(rm.arch.act);
  j["linear_skip"] = rm.arch.linear_skip;
  j["mu"] = rm.mu;
  j["sigma"] = rm.sigma;
  j["train_seed"] = rm.train_seed;
  j["frozen"] = rm.frozen;
  write_file(base.string() + ".json", j.dump(2) + "\n");
}

inline RewardNet load_reward_net(const std::filesystem::path& base,
                                 std::shared_ptr<const FeatureMap> feature_map) {
  RewardNet rm;
  rm.params = ParamStore::load_string(read_file(base.string() + ".ckpt"));
  const nlohmann::json j = nlohmann::json::parse(read_file(base.string() + ".json"));
  rm.arch_tag = j.at("arch_tag").get<std::string>();
  rm.arch.hidden_dim = j.at("hidden_dim").get<int>();
  rm.arch.act = j.at("activation").get<std::string>() == "relu" ? Activation::kRelu : Activation::kTanh;
  rm.arch.linear_skip = j.at("linear_skip").get<bool>();
  rm.arch.in_dim = feature_map->dim();
  rm.feature_map = std::move(feature_map);
  rm.mu = j.at("mu").get<double>();
  rm.sigma = j.at("sigma").get<double>();
  rm.train_seed = j.at("train_seed").get<std::uint64_t>();
  rm.frozen = j.at("frozen").get<bool>();
  return rm;
}

}  // namespace advrm
