#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "advrm/errors.hpp"
#include "advrm/rng.hpp"

namespace advrm {

// Numerically stable log-softmax. Shift invariance: adding any constant to
// all logits leaves the output unchanged.
inline void log_softmax(std::span<const double> logits, std::vector<double>& out) {
  if (logits.empty()) throw ConfigError("log_softmax: empty logits");
  out.resize(logits.size());
  double maxv = logits[0];
  for (double v : logits) {
    if (!std::isfinite(v)) throw NumericError("log_softmax: non-finite logit");
    if (v > maxv) maxv = v;
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = logits[i] - maxv;
    sum += std::exp(out[i]);
  }
  const double lse = std::log(sum);
  for (double& v : out) v -= lse;
}

struct CategoricalDraw {
  int index = -1;
  double logp = 0.0;
};

// Draws an index from softmax(logits); the returned log-probability is the
// log-softmax entry of that index, bit-for-bit.
inline CategoricalDraw sample_categorical(std::span<const double> logits, Rng& rng) {
  std::vector<double> lp;
  log_softmax(logits, lp);
  const double u = rng.uniform();
  double cum = 0.0;
  int idx = static_cast<int>(lp.size()) - 1;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    cum += std::exp(lp[i]);
    if (u < cum) {
      idx = static_cast<int>(i);
      break;
    }
  }
  return {idx, lp[static_cast<std::size_t>(idx)]};
}

inline double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// log(1 + e^x) without overflow; -log(sigmoid(m)) == softplus(-m).
inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace advrm
