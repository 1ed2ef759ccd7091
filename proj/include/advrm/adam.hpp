#pragma once

#include <cmath>

#include "advrm/errors.hpp"
#include "advrm/params.hpp"

namespace advrm {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update over every named array. The store's step
// count advances by one per call.
inline void adam_step(ParamStore& params, const Gradients& grads, const AdamConfig& cfg) {
  if (cfg.lr <= 0.0) throw ConfigError("adam: lr must be > 0");
  if (!grads.finite()) throw NumericError("adam: non-finite gradient");
  const long t = params.step_count() + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& [name, p] : params.mutable_arrays()) {
    const Array& g = grads.at(name);
    if (g.size() != p.size()) throw ConfigError("adam: gradient shape mismatch for " + name);
    Array& m = params.moment1(name);
    Array& v = params.moment2(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
  params.set_step_count(t);
  if (!params.finite()) throw NumericError("adam: non-finite parameter after update");
}

}  // namespace advrm
