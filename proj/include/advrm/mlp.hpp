#pragma once

#include <cmath>
#include <span>
#include <string>

#include "advrm/errors.hpp"
#include "advrm/params.hpp"
#include "advrm/rng.hpp"

namespace advrm {

enum class Activation { kRelu, kTanh };

inline std::string activation_name(Activation a) { return a == Activation::kRelu ? "relu" : "tanh"; }

// Single-hidden-layer scorer: s = w2 . act(W1 x + b1) + b2 (+ skip . x).
// The linear skip lets a model express plain linear trends in the features
// exactly; for the gold model it carries the fixed degeneracy penalties.
struct ScoreMlpConfig {
  int in_dim = 0;
  int hidden_dim = 0;
  Activation act = Activation::kRelu;
  bool linear_skip = true;
  double output_gain = 1.0;  // scales w2 init only
};

inline void init_score_mlp(ParamStore& params, const ScoreMlpConfig& cfg, Rng& rng) {
  if (cfg.in_dim <= 0 || cfg.hidden_dim <= 0) throw ConfigError("score mlp: non-positive dims");
  Array& w1 = params.add("w1", static_cast<std::size_t>(cfg.hidden_dim) * cfg.in_dim);
  params.add("b1", static_cast<std::size_t>(cfg.hidden_dim));
  Array& w2 = params.add("w2", static_cast<std::size_t>(cfg.hidden_dim));
  params.add("b2", 1);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(cfg.in_dim));
  const double s2 = cfg.output_gain / std::sqrt(static_cast<double>(cfg.hidden_dim));
  for (double& w : w1) w = rng.normal(0.0, s1);
  for (double& w : w2) w = rng.normal(0.0, s2);
  if (cfg.linear_skip) params.add("skip", static_cast<std::size_t>(cfg.in_dim));
}

inline double score_mlp_forward(const ParamStore& params, const ScoreMlpConfig& cfg,
                                std::span<const double> x) {
  if (static_cast<int>(x.size()) != cfg.in_dim)
    throw ConfigError("score mlp: feature length " + std::to_string(x.size()) + " != in_dim " +
                      std::to_string(cfg.in_dim));
  const Array& w1 = params.at("w1");
  const Array& b1 = params.at("b1");
  const Array& w2 = params.at("w2");
  double s = params.at("b2")[0];
  for (int h = 0; h < cfg.hidden_dim; ++h) {
    double z = b1[static_cast<std::size_t>(h)];
    const double* row = &w1[static_cast<std::size_t>(h) * cfg.in_dim];
    for (int i = 0; i < cfg.in_dim; ++i) z += row[i] * x[static_cast<std::size_t>(i)];
    const double a = cfg.act == Activation::kRelu ? (z > 0.0 ? z : 0.0) : std::tanh(z);
    s += w2[static_cast<std::size_t>(h)] * a;
  }
  if (cfg.linear_skip) {
    const Array& skip = params.at("skip");
    for (int i = 0; i < cfg.in_dim; ++i) s += skip[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
  }
  return s;
}

// Accumulates upstream * d(score)/d(theta) into grads. Hand-derived; checked
// against central finite differences in the test suite.
inline void score_mlp_backward(const ParamStore& params, const ScoreMlpConfig& cfg,
                               std::span<const double> x, double upstream, Gradients& grads) {
  if (!std::isfinite(upstream)) throw NumericError("score mlp backward: non-finite upstream");
  if (static_cast<int>(x.size()) != cfg.in_dim) throw ConfigError("score mlp backward: feature length mismatch");
  const Array& w1 = params.at("w1");
  const Array& b1 = params.at("b1");
  const Array& w2 = params.at("w2");
  Array& gw1 = grads["w1"];
  Array& gb1 = grads["b1"];
  Array& gw2 = grads["w2"];
  grads["b2"][0] += upstream;
  for (int h = 0; h < cfg.hidden_dim; ++h) {
    double z = b1[static_cast<std::size_t>(h)];
    const double* row = &w1[static_cast<std::size_t>(h) * cfg.in_dim];
    for (int i = 0; i < cfg.in_dim; ++i) z += row[i] * x[static_cast<std::size_t>(i)];
    double a, da;
    if (cfg.act == Activation::kRelu) {
      a = z > 0.0 ? z : 0.0;
      da = z > 0.0 ? 1.0 : 0.0;
    } else {
      a = std::tanh(z);
      da = 1.0 - a * a;
    }
    gw2[static_cast<std::size_t>(h)] += upstream * a;
    const double dz = upstream * w2[static_cast<std::size_t>(h)] * da;
    gb1[static_cast<std::size_t>(h)] += dz;
    double* grow = &gw1[static_cast<std::size_t>(h) * cfg.in_dim];
    for (int i = 0; i < cfg.in_dim; ++i) grow[i] += dz * x[static_cast<std::size_t>(i)];
  }
  if (cfg.linear_skip) {
    Array& gskip = grads["skip"];
    for (int i = 0; i < cfg.in_dim; ++i) gskip[static_cast<std::size_t>(i)] += upstream * x[static_cast<std::size_t>(i)];
  }
}

}  // namespace advrm
