#pragma once

#include <cstdint>
#include <vector>

#include "advrm/errors.hpp"
#include "advrm/rng.hpp"
#include "advrm/tokens.hpp"

namespace advrm {

// Which sequence statistics a feature map exposes. Nets scoring through a
// map cannot represent penalties on statistics the map leaves out.
enum class StatsMode {
  kNone,           // no sequence statistics at all
  kExtremityOnly,  // only the embedding-extremity scalar
  kAll,            // the full statistic block
};

struct FeatureMapConfig {
  int vocab = 32;
  int max_len = 16;
  int embed_dim = 8;
  int bigram_buckets = 16;
  StatsMode stats = StatsMode::kAll;
};

// Frozen, seed-derived map from a (prompt, response) pair to a fixed-width
// feature vector: mean-pooled embeddings for prompt and response, a
// position-weighted response pool, a hashed bigram histogram, and a block of
// sequence statistics. Scoring nets see the pair only through this vector.
class FeatureMap {
 public:
  static constexpr int kNumStats = 7;

  FeatureMap(const FeatureMapConfig& cfg, Rng rng) : cfg_(cfg) {
    if (cfg.vocab < 2 || cfg.max_len < 1) throw ConfigError("feature map: degenerate vocab/max_len");
    embed_.resize(static_cast<std::size_t>(cfg.vocab) * cfg.embed_dim);
    for (double& e : embed_) e = rng.normal();
    pos_weight_.resize(static_cast<std::size_t>(cfg.max_len));
    for (double& w : pos_weight_) w = rng.uniform(0.25, 1.0);
    bigram_salt_ = rng.next_u64();
  }

  const FeatureMapConfig& config() const { return cfg_; }

  int dim() const {
    const int base = 3 * cfg_.embed_dim + cfg_.bigram_buckets;
    switch (cfg_.stats) {
      case StatsMode::kNone: return base;
      case StatsMode::kExtremityOnly: return base + 1;
      case StatsMode::kAll: return base + kNumStats;
    }
    throw StateError("feature map: unknown stats mode");
  }

  // Offset of the full sequence-statistic block, in feature-vector order:
  // length ratio, squared length deviation, unigram concentration, adjacent
  // repeat rate, bigram concentration, distinct-token ratio, embedding
  // extremity (squared norm of the response mean-pool, per dimension).
  int stats_offset() const {
    if (cfg_.stats != StatsMode::kAll)
      throw StateError("feature map was built without the full statistic block");
    return 3 * cfg_.embed_dim + cfg_.bigram_buckets;
  }

  // Offset of the embedding-extremity scalar, present in both non-empty modes.
  int extremity_offset() const {
    switch (cfg_.stats) {
      case StatsMode::kNone:
        throw StateError("feature map was built without sequence statistics");
      case StatsMode::kExtremityOnly: return 3 * cfg_.embed_dim + cfg_.bigram_buckets;
      case StatsMode::kAll: return stats_offset() + 6;
    }
    throw StateError("feature map: unknown stats mode");
  }

  void features(const Prompt& prompt, const Response& response, std::vector<double>& out) const {
    out.assign(static_cast<std::size_t>(dim()), 0.0);
    const int E = cfg_.embed_dim;
    pool_mean(prompt.tokens, &out[0]);
    pool_mean(response.tokens, &out[static_cast<std::size_t>(E)]);
    pool_positional(response.tokens, &out[static_cast<std::size_t>(2 * E)]);

    const int len = response.length();
    double* bigram = &out[static_cast<std::size_t>(3 * E)];
    if (len >= 2) {
      for (int t = 0; t + 1 < len; ++t) {
        const std::size_t b = bucket(response.tokens[static_cast<std::size_t>(t)],
                                     response.tokens[static_cast<std::size_t>(t + 1)]);
        bigram[b] += 1.0;
      }
      for (int b = 0; b < cfg_.bigram_buckets; ++b) bigram[b] /= static_cast<double>(len - 1);
    }

    if (cfg_.stats == StatsMode::kAll) {
      double* stats = &out[static_cast<std::size_t>(stats_offset())];
      fill_stats(response, bigram, &out[static_cast<std::size_t>(E)], stats);
    } else if (cfg_.stats == StatsMode::kExtremityOnly) {
      out[static_cast<std::size_t>(extremity_offset())] =
          extremity(&out[static_cast<std::size_t>(E)]);
    }
  }

  std::vector<double> features(const Prompt& prompt, const Response& response) const {
    std::vector<double> out;
    features(prompt, response, out);
    return out;
  }

 private:
  void pool_mean(const std::vector<int>& tokens, double* out) const {
    if (tokens.empty()) return;
    const int E = cfg_.embed_dim;
    for (int tok : tokens) {
      check_token(tok);
      const double* e = &embed_[static_cast<std::size_t>(tok) * E];
      for (int d = 0; d < E; ++d) out[d] += e[d];
    }
    for (int d = 0; d < E; ++d) out[d] /= static_cast<double>(tokens.size());
  }

  void pool_positional(const std::vector<int>& tokens, double* out) const {
    if (tokens.empty()) return;
    const int E = cfg_.embed_dim;
    double wsum = 0.0;
    for (std::size_t t = 0; t < tokens.size(); ++t) wsum += pos_weight_[t];
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const double w = pos_weight_[t] / wsum;
      const double* e = &embed_[static_cast<std::size_t>(tokens[t]) * E];
      for (int d = 0; d < E; ++d) out[d] += w * e[d];
    }
  }

  double extremity(const double* resp_pool) const {
    double pool_sq = 0.0;
    for (int d = 0; d < cfg_.embed_dim; ++d) pool_sq += resp_pool[d] * resp_pool[d];
    return pool_sq / cfg_.embed_dim;
  }

  void fill_stats(const Response& response, const double* bigram, const double* resp_pool,
                  double* stats) const {
    const int len = response.length();
    const double len_ratio = static_cast<double>(len) / cfg_.max_len;
    stats[0] = len_ratio;
    stats[1] = (len_ratio - 0.75) * (len_ratio - 0.75);
    stats[6] = extremity(resp_pool);
    if (len == 0) {
      // Empty output is maximally degenerate.
      stats[2] = 1.0;
      stats[3] = 1.0;
      stats[4] = 1.0;
      stats[5] = 0.0;
      return;
    }
    std::vector<int> counts(static_cast<std::size_t>(cfg_.vocab), 0);
    int repeats = 0;
    for (int t = 0; t < len; ++t) {
      check_token(response.tokens[static_cast<std::size_t>(t)]);
      counts[static_cast<std::size_t>(response.tokens[static_cast<std::size_t>(t)])]++;
      if (t > 0 && response.tokens[static_cast<std::size_t>(t)] == response.tokens[static_cast<std::size_t>(t - 1)])
        repeats++;
    }
    double conc = 0.0;
    int distinct = 0;
    for (int c : counts) {
      if (c > 0) distinct++;
      const double p = static_cast<double>(c) / len;
      conc += p * p;
    }
    stats[2] = conc;
    stats[3] = len >= 2 ? static_cast<double>(repeats) / (len - 1) : 0.0;
    double bconc = len >= 2 ? 0.0 : 1.0;
    if (len >= 2)
      for (int b = 0; b < cfg_.bigram_buckets; ++b) bconc += bigram[b] * bigram[b];
    stats[4] = bconc;
    stats[5] = static_cast<double>(distinct) / len;
  }

  std::size_t bucket(int a, int b) const {
    const std::uint64_t key = bigram_salt_ ^ (static_cast<std::uint64_t>(a) * 7919u + static_cast<std::uint64_t>(b));
    return static_cast<std::size_t>(splitmix64(key) % static_cast<std::uint64_t>(cfg_.bigram_buckets));
  }

  void check_token(int tok) const {
    if (tok < 0 || tok >= cfg_.vocab) throw ConfigError("token id out of vocabulary: " + std::to_string(tok));
  }

  FeatureMapConfig cfg_;
  std::vector<double> embed_;
  std::vector<double> pos_weight_;
  std::uint64_t bigram_salt_ = 0;
};

}  // namespace advrm
