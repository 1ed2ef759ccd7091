#pragma once

#include <cmath>
#include <filesystem>
#include <memory>
#include <vector>

#include <json.hpp>

#include "advrm/categorical.hpp"
#include "advrm/errors.hpp"
#include "advrm/io.hpp"
#include "advrm/params.hpp"
#include "advrm/rng.hpp"
#include "advrm/tokens.hpp"

namespace advrm {

struct PolicyConfig {
  int vocab = 32;      // content tokens; the end marker is logit index == vocab
  int max_len = 16;
  int embed_dim = 8;
  int hidden_dim = 24;
};

// Autoregressive categorical sequence model: a mean-pooled prompt embedding
// sets the initial hidden state, a tanh recurrence summarizes the generated
// prefix, and a linear head emits per-step logits over vocab + end marker.
// Generation stops at the end marker or at max_len.
struct PolicyNet {
  PolicyConfig cfg;
  ParamStore params;
  // Frozen snapshot of the parameters this policy was initialized from; the
  // KL anchor during RL. Never updated.
  std::shared_ptr<const ParamStore> anchor;

  int logit_dim() const { return cfg.vocab + 1; }
  int eos_id() const { return cfg.vocab; }
};

inline PolicyNet init_policy(const PolicyConfig& cfg, Rng& rng) {
  if (cfg.vocab < 2 || cfg.max_len < 1) throw ConfigError("policy: degenerate vocab/max_len");
  PolicyNet p;
  p.cfg = cfg;
  const int V = cfg.vocab, E = cfg.embed_dim, H = cfg.hidden_dim, O = cfg.vocab + 1;
  Array& embed = p.params.add("embed", static_cast<std::size_t>(V) * E);
  Array& w_p = p.params.add("w_p", static_cast<std::size_t>(H) * E);
  p.params.add("b_p", static_cast<std::size_t>(H));
  Array& w_h = p.params.add("w_h", static_cast<std::size_t>(H) * H);
  Array& w_x = p.params.add("w_x", static_cast<std::size_t>(H) * E);
  p.params.add("b_h", static_cast<std::size_t>(H));
  Array& w_o = p.params.add("w_o", static_cast<std::size_t>(O) * H);
  p.params.add("b_o", static_cast<std::size_t>(O));
  for (double& w : embed) w = rng.normal(0.0, 0.5);
  for (double& w : w_p) w = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(E)));
  for (double& w : w_h) w = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(H)));
  for (double& w : w_x) w = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(E)));
  for (double& w : w_o) w = rng.normal(0.0, 0.5 / std::sqrt(static_cast<double>(H)));
  p.anchor = std::make_shared<ParamStore>(p.params);
  return p;
}

// Copy with the source's current parameters as the new frozen anchor.
inline PolicyNet clone_policy(const PolicyNet& src) {
  PolicyNet p;
  p.cfg = src.cfg;
  p.params = src.params;
  p.anchor = std::make_shared<ParamStore>(src.params);
  return p;
}

namespace detail {

// Hidden states and per-step log-probabilities from a teacher-forced pass.
struct PolicyTrace {
  std::vector<std::vector<double>> h;       // n_steps x H
  std::vector<std::vector<double>> logp;    // n_steps x (V+1), tempered log-softmax
  std::vector<double> prompt_pool;          // E
  int n_steps = 0;
};

inline void prompt_pool(const PolicyConfig& cfg, const ParamStore& params, const Prompt& prompt,
                        std::vector<double>& out) {
  if (prompt.tokens.empty()) throw ConfigError("policy: empty prompt");
  const Array& embed = params.at("embed");
  out.assign(static_cast<std::size_t>(cfg.embed_dim), 0.0);
  for (int tok : prompt.tokens) {
    if (tok < 0 || tok >= cfg.vocab) throw ConfigError("policy: prompt token out of range");
    const double* e = &embed[static_cast<std::size_t>(tok) * cfg.embed_dim];
    for (int d = 0; d < cfg.embed_dim; ++d) out[static_cast<std::size_t>(d)] += e[d];
  }
  for (double& v : out) v /= static_cast<double>(prompt.tokens.size());
}

inline void initial_hidden(const PolicyConfig& cfg, const ParamStore& params,
                           const std::vector<double>& pool, std::vector<double>& h) {
  const Array& w_p = params.at("w_p");
  const Array& b_p = params.at("b_p");
  h.assign(static_cast<std::size_t>(cfg.hidden_dim), 0.0);
  for (int i = 0; i < cfg.hidden_dim; ++i) {
    double z = b_p[static_cast<std::size_t>(i)];
    const double* row = &w_p[static_cast<std::size_t>(i) * cfg.embed_dim];
    for (int d = 0; d < cfg.embed_dim; ++d) z += row[d] * pool[static_cast<std::size_t>(d)];
    h[static_cast<std::size_t>(i)] = std::tanh(z);
  }
}

inline void step_hidden(const PolicyConfig& cfg, const ParamStore& params, const std::vector<double>& h_prev,
                        int token, std::vector<double>& h_out) {
  const Array& w_h = params.at("w_h");
  const Array& w_x = params.at("w_x");
  const Array& b_h = params.at("b_h");
  const Array& embed = params.at("embed");
  const double* e = &embed[static_cast<std::size_t>(token) * cfg.embed_dim];
  h_out.assign(static_cast<std::size_t>(cfg.hidden_dim), 0.0);
  for (int i = 0; i < cfg.hidden_dim; ++i) {
    double z = b_h[static_cast<std::size_t>(i)];
    const double* rh = &w_h[static_cast<std::size_t>(i) * cfg.hidden_dim];
    for (int j = 0; j < cfg.hidden_dim; ++j) z += rh[j] * h_prev[static_cast<std::size_t>(j)];
    const double* rx = &w_x[static_cast<std::size_t>(i) * cfg.embed_dim];
    for (int d = 0; d < cfg.embed_dim; ++d) z += rx[d] * e[d];
    h_out[static_cast<std::size_t>(i)] = std::tanh(z);
  }
}

inline void step_logits(const PolicyConfig& cfg, const ParamStore& params, const std::vector<double>& h,
                        double temperature, std::vector<double>& logits) {
  const Array& w_o = params.at("w_o");
  const Array& b_o = params.at("b_o");
  const int O = cfg.vocab + 1;
  logits.assign(static_cast<std::size_t>(O), 0.0);
  for (int o = 0; o < O; ++o) {
    double z = b_o[static_cast<std::size_t>(o)];
    const double* row = &w_o[static_cast<std::size_t>(o) * cfg.hidden_dim];
    for (int j = 0; j < cfg.hidden_dim; ++j) z += row[j] * h[static_cast<std::size_t>(j)];
    logits[static_cast<std::size_t>(o)] = z / temperature;
  }
}

// Teacher-forced pass over a complete response. Steps 0..len-1 target the
// content tokens; a final step targets the end marker when the response
// terminated before max_len.
inline PolicyTrace run_teacher_forced(const PolicyConfig& cfg, const ParamStore& params,
                                      const Prompt& prompt, const Response& response, double temperature) {
  PolicyTrace tr;
  const int len = response.length();
  const bool has_eos = len < cfg.max_len;
  tr.n_steps = len + (has_eos ? 1 : 0);
  tr.h.resize(static_cast<std::size_t>(tr.n_steps));
  tr.logp.resize(static_cast<std::size_t>(tr.n_steps));
  prompt_pool(cfg, params, prompt, tr.prompt_pool);
  if (tr.n_steps == 0) return tr;
  initial_hidden(cfg, params, tr.prompt_pool, tr.h[0]);
  std::vector<double> logits;
  for (int t = 0; t < tr.n_steps; ++t) {
    if (t > 0) step_hidden(cfg, params, tr.h[static_cast<std::size_t>(t - 1)],
                           response.tokens[static_cast<std::size_t>(t - 1)], tr.h[static_cast<std::size_t>(t)]);
    step_logits(cfg, params, tr.h[static_cast<std::size_t>(t)], temperature, logits);
    log_softmax(logits, tr.logp[static_cast<std::size_t>(t)]);
  }
  return tr;
}

}  // namespace detail

struct PolicySample {
  Response response;
  double logp = 0.0;  // whole-sequence log-probability (content + end marker)
};

inline PolicySample sample_response(const PolicyNet& policy, const Prompt& prompt, Rng& rng,
                                    double temperature = 1.0) {
  const PolicyConfig& cfg = policy.cfg;
  PolicySample out;
  std::vector<double> pool, h, h_next, logits, logp;
  detail::prompt_pool(cfg, policy.params, prompt, pool);
  detail::initial_hidden(cfg, policy.params, pool, h);
  for (int t = 0; t < cfg.max_len; ++t) {
    detail::step_logits(cfg, policy.params, h, temperature, logits);
    const CategoricalDraw draw = sample_categorical(logits, rng);
    out.logp += draw.logp;
    if (draw.index == policy.eos_id()) {
      out.response.end_marker = t;
      return out;
    }
    out.response.tokens.push_back(draw.index);
    if (t + 1 < cfg.max_len) {
      detail::step_hidden(cfg, policy.params, h, draw.index, h_next);
      h.swap(h_next);
    }
  }
  return out;
}

// Log-probability of a complete response, computed under `which` (defaults to
// the policy's current parameters; pass the anchor for KL estimates). Mirrors
// the sampling rule exactly: the end-marker step is included iff the response
// is shorter than max_len.
inline double response_logp(const PolicyNet& policy, const Prompt& prompt, const Response& response,
                            double temperature = 1.0, const ParamStore* which = nullptr) {
  const ParamStore& params = which ? *which : policy.params;
  const detail::PolicyTrace tr =
      detail::run_teacher_forced(policy.cfg, params, prompt, response, temperature);
  double lp = 0.0;
  for (int t = 0; t < tr.n_steps; ++t) {
    const int target = t < response.length() ? response.tokens[static_cast<std::size_t>(t)] : policy.eos_id();
    lp += tr.logp[static_cast<std::size_t>(t)][static_cast<std::size_t>(target)];
  }
  return lp;
}

// Accumulates coeff * d(log p(response | prompt)) / d(theta) into grads via
// backpropagation through time.
inline void response_logp_backward(const PolicyNet& policy, const Prompt& prompt, const Response& response,
                                   double coeff, Gradients& grads, double temperature = 1.0) {
  if (!std::isfinite(coeff)) throw NumericError("policy backward: non-finite coefficient");
  const PolicyConfig& cfg = policy.cfg;
  const ParamStore& params = policy.params;
  const detail::PolicyTrace tr = detail::run_teacher_forced(cfg, params, prompt, response, temperature);
  if (tr.n_steps == 0) return;

  const int H = cfg.hidden_dim, E = cfg.embed_dim, O = cfg.vocab + 1;
  const Array& w_o = params.at("w_o");
  const Array& w_h = params.at("w_h");
  const Array& w_x = params.at("w_x");
  const Array& w_p = params.at("w_p");
  const Array& embed = params.at("embed");
  Array& g_w_o = grads["w_o"];
  Array& g_b_o = grads["b_o"];
  Array& g_w_h = grads["w_h"];
  Array& g_w_x = grads["w_x"];
  Array& g_b_h = grads["b_h"];
  Array& g_w_p = grads["w_p"];
  Array& g_b_p = grads["b_p"];
  Array& g_embed = grads["embed"];

  std::vector<std::vector<double>> dh(static_cast<std::size_t>(tr.n_steps),
                                      std::vector<double>(static_cast<std::size_t>(H), 0.0));
  std::vector<double> dlogits(static_cast<std::size_t>(O));
  for (int t = 0; t < tr.n_steps; ++t) {
    const int target = t < response.length() ? response.tokens[static_cast<std::size_t>(t)] : policy.eos_id();
    const std::vector<double>& lp = tr.logp[static_cast<std::size_t>(t)];
    for (int o = 0; o < O; ++o) {
      const double p = std::exp(lp[static_cast<std::size_t>(o)]);
      dlogits[static_cast<std::size_t>(o)] = coeff * ((o == target ? 1.0 : 0.0) - p) / temperature;
    }
    const std::vector<double>& h = tr.h[static_cast<std::size_t>(t)];
    for (int o = 0; o < O; ++o) {
      const double d = dlogits[static_cast<std::size_t>(o)];
      g_b_o[static_cast<std::size_t>(o)] += d;
      double* grow = &g_w_o[static_cast<std::size_t>(o) * H];
      const double* row = &w_o[static_cast<std::size_t>(o) * H];
      std::vector<double>& dht = dh[static_cast<std::size_t>(t)];
      for (int j = 0; j < H; ++j) {
        grow[j] += d * h[static_cast<std::size_t>(j)];
        dht[static_cast<std::size_t>(j)] += d * row[j];
      }
    }
  }

  // Backward through the recurrence, newest step first.
  for (int t = tr.n_steps - 1; t >= 1; --t) {
    const std::vector<double>& h_t = tr.h[static_cast<std::size_t>(t)];
    const std::vector<double>& h_prev = tr.h[static_cast<std::size_t>(t - 1)];
    const int tok = response.tokens[static_cast<std::size_t>(t - 1)];
    const double* e = &embed[static_cast<std::size_t>(tok) * E];
    double* ge = &g_embed[static_cast<std::size_t>(tok) * E];
    for (int i = 0; i < H; ++i) {
      const double hi = h_t[static_cast<std::size_t>(i)];
      const double dz = dh[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] * (1.0 - hi * hi);
      if (dz == 0.0) continue;
      g_b_h[static_cast<std::size_t>(i)] += dz;
      double* grh = &g_w_h[static_cast<std::size_t>(i) * H];
      const double* rh = &w_h[static_cast<std::size_t>(i) * H];
      std::vector<double>& dhp = dh[static_cast<std::size_t>(t - 1)];
      for (int j = 0; j < H; ++j) {
        grh[j] += dz * h_prev[static_cast<std::size_t>(j)];
        dhp[static_cast<std::size_t>(j)] += dz * rh[j];
      }
      double* grx = &g_w_x[static_cast<std::size_t>(i) * E];
      const double* rx = &w_x[static_cast<std::size_t>(i) * E];
      for (int d = 0; d < E; ++d) {
        grx[d] += dz * e[d];
        ge[d] += dz * rx[d];
      }
    }
  }

  // Initial state: h0 = tanh(W_p pool + b_p).
  std::vector<double> dpool(static_cast<std::size_t>(E), 0.0);
  const std::vector<double>& h0 = tr.h[0];
  for (int i = 0; i < H; ++i) {
    const double hi = h0[static_cast<std::size_t>(i)];
    const double dz = dh[0][static_cast<std::size_t>(i)] * (1.0 - hi * hi);
    if (dz == 0.0) continue;
    g_b_p[static_cast<std::size_t>(i)] += dz;
    double* grp = &g_w_p[static_cast<std::size_t>(i) * E];
    const double* rp = &w_p[static_cast<std::size_t>(i) * E];
    for (int d = 0; d < E; ++d) {
      grp[d] += dz * tr.prompt_pool[static_cast<std::size_t>(d)];
      dpool[static_cast<std::size_t>(d)] += dz * rp[d];
    }
  }
  const double inv_plen = 1.0 / static_cast<double>(prompt.tokens.size());
  for (int tok : prompt.tokens) {
    double* ge = &g_embed[static_cast<std::size_t>(tok) * E];
    for (int d = 0; d < E; ++d) ge[d] += dpool[static_cast<std::size_t>(d)] * inv_plen;
  }
}

inline void save_policy(const PolicyNet& policy, const std::filesystem::path& base) {
  write_file(base.string() + ".ckpt", policy.params.save_string());
  write_file(base.string() + ".anchor.ckpt", policy.anchor->save_string());
  nlohmann::json j;
  j["vocab"] = policy.cfg.vocab;
  j["max_len"] = policy.cfg.max_len;
  j["embed_dim"] = policy.cfg.embed_dim;
  j["hidden_dim"] = policy.cfg.hidden_dim;
  write_file(base.string() + ".json", j.dump(2) + "\n");
}

inline PolicyNet load_policy(const std::filesystem::path& base) {
  PolicyNet p;
  const nlohmann::json j = nlohmann::json::parse(read_file(base.string() + ".json"));
  p.cfg.vocab = j.at("vocab").get<int>();
  p.cfg.max_len = j.at("max_len").get<int>();
  p.cfg.embed_dim = j.at("embed_dim").get<int>();
  p.cfg.hidden_dim = j.at("hidden_dim").get<int>();
  p.params = ParamStore::load_string(read_file(base.string() + ".ckpt"));
  p.anchor = std::make_shared<ParamStore>(ParamStore::load_string(read_file(base.string() + ".anchor.ckpt")));
  return p;
}

}  // namespace advrm
