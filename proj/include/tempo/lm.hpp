#pragma once

// Character-level causal language model: token and position embeddings, one
// single-head causal attention block and one feed-forward block, both
// residual, followed by an output projection to vocabulary logits.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tempo/autodiff.hpp"
#include "tempo/data.hpp"
#include "tempo/dro.hpp"
#include "tempo/tempnet.hpp"

namespace tempo::models {

struct LmConfig {
  std::size_t vocab = 0;
  std::size_t d_model = 64;
  std::size_t d_ff = 128;
  std::size_t context = 32;

  void validate() const;
  friend bool operator==(const LmConfig&, const LmConfig&) = default;
};

struct LmParams {
  Tensor tok_emb;  // [vocab x d]
  Tensor pos_emb;  // [context x d]
  Tensor Wq, Wk, Wv, Wo;  // [d x d]
  Tensor W_ff1;  // [d_ff x d]
  Tensor b_ff1;  // [d_ff]
  Tensor W_ff2;  // [d x d_ff]
  Tensor b_ff2;  // [d]
  Tensor W_out;  // [vocab x d]
  Tensor b_out;  // [vocab]

  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
};

struct LanguageModel {
  LmConfig cfg;
  LmParams params;
};

/// zero_output makes every logit exactly zero (a uniform model).
LanguageModel init_lm(const LmConfig& cfg, std::uint64_t seed, bool zero_output = false);

struct LmVars {
  std::vector<ad::Var> vars;  // params.named() order
};

LmVars bind(ad::Tape& tape, const LmParams& params, bool requires_grad);
void collect_grads(const ad::Tape& tape, const LmVars& vars, LmParams& out);

/// Logits for every predicted position, [batch.positions() x vocab], rows in
/// sequence order. Sequences may not exceed context + 1 tokens.
ad::Var lm_logits(const LmConfig& cfg, const LmVars& vars, const data::TokenBatch& batch);
Tensor lm_logits(const LanguageModel& lm, const data::TokenBatch& batch);

/// Mean over positions of logsumexp(L) - L_target.
ad::Var baseline_ce_loss(ad::Var logits, const std::vector<std::size_t>& targets);

struct RobustLoss {
  ad::Var loss;  // scalar mean over rows
  ad::Var tau;   // per-row temperatures
};

/// Mean over positions of the robust loss with the full vocabulary as the
/// contrast set and per-position tau from the TempNet applied to detached logits.
RobustLoss robust_softmax_loss(ad::Var logits, const std::vector<std::size_t>& targets,
                               const net::TempNetConfig& tcfg, const net::TempNetVars& tvars, double rho);

/// Same loss with externally supplied per-row temperatures.
ad::Var robust_softmax_loss(ad::Var logits, const std::vector<std::size_t>& targets, ad::Var tau, double rho);

/// Fixed temperature, or a TempNet evaluated on each position's logits.
struct TemperatureSource {
  std::optional<double> fixed;
  const net::TempNet* tempnet = nullptr;

  static TemperatureSource constant(double tau) { return {tau, nullptr}; }
  static TemperatureSource network(const net::TempNet& n) { return {std::nullopt, &n}; }
};

/// Per-row temperatures for a logit matrix.
std::vector<double> temperatures(const TemperatureSource& source, const Tensor& logits);

/// exp of the mean NLL under softmax(L / tau) over every position of every batch.
double perplexity(const LanguageModel& lm, const TemperatureSource& source, const std::vector<data::TokenBatch>& corpus);

}  // namespace tempo::models
