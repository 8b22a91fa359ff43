#pragma once

// Instance-dependent temperature network.
//
// Input -> transformation v = relu(W1 x + b1) -> prototypical logits u ->
// pooled scalar s -> tau = tau0 + (tau_max - tau0) * sigmoid(s).
//
// LlmLogits: x = L / ||L||, u = W2 v with W2 stored [d2 x d1].
// ClEmbedding: x is a unit embedding, u = W2n^T v where W2n is W2 [d1 x d2]
// with each column scaled to unit length at use time.
//
// The pooling mirrors the closed-form temperature fixed point with the
// prototypical logits in place of the true logits:
//   s = (1/rho) * [sum_k (softmax(u / phi)_k - 1/d2) * w3_k * u_k - b]

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tempo/autodiff.hpp"
#include "tempo/tensor.hpp"

namespace tempo::net {

enum class Variant { LlmLogits, ClEmbedding };

std::string to_string(Variant v);

struct TempNetConfig {
  Variant variant = Variant::LlmLogits;
  std::size_t d0 = 0;
  std::size_t d1 = 0;
  std::size_t d2 = 0;
  double tau0 = 0.001;
  double tau_max = 2.0;
  double rho = 10.0;

  void validate() const;
};

struct TempNetParams {
  Tensor W1;   // [d1 x d0]
  Tensor b1;   // [d1]
  Tensor W2;   // [d2 x d1] for LlmLogits, [d1 x d2] for ClEmbedding
  Tensor w3;   // [d2]
  Tensor phi;  // [1], kept positive
  Tensor b;    // [1]

  /// Stable order used by the optimizer and the checkpoint.
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
};

struct TempNet {
  TempNetConfig cfg;
  TempNetParams params;
};

struct TempNetCache {
  std::vector<double> v;
  std::vector<double> u;
  double s = 0.0;
  double tau = 0.0;
};

TempNet init_llm_tempnet(const TempNetConfig& cfg, std::uint64_t seed);

/// samples, if given, is [n x d1] with n >= d2; its first d2 rows become the
/// prototype columns.
TempNet init_cl_tempnet(const TempNetConfig& cfg, std::uint64_t seed, const Tensor* samples = nullptr);

double parameterized_pooling(std::span<const double> u, std::span<const double> w3, double phi,
                             double b, double rho);

double output_map(double s, double tau0, double tau_max);

/// Single-instance evaluation in plain arithmetic.
std::pair<double, TempNetCache> forward_llm(const TempNet& net, std::span<const double> raw_logits);
std::pair<double, TempNetCache> forward_cl(const TempNet& net, std::span<const double> embedding);

/// Tolerance on ||e|| - 1 accepted by the embedding variant.
inline constexpr double kUnitTolerance = 1e-6;

/// Parameters placed on a tape.
struct TempNetVars {
  ad::Var W1, b1, W2, w3, phi, b;
};

TempNetVars bind(ad::Tape& tape, const TempNetParams& params, bool requires_grad);

/// Batched forward: inputs is [N x d0], result is tau of length N. Unlike
/// forward_llm, an all-zero logit row is accepted and normalizes to zero.
ad::Var forward(const TempNetConfig& cfg, const TempNetVars& vars, ad::Var inputs);

/// Writes gradients held on the tape into out, matching params.named() order.
void collect_grads(const ad::Tape& tape, const TempNetVars& vars, TempNetParams& out);

}  // namespace tempo::net
