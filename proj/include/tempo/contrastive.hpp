#pragma once

// Two-tower contrastive model over dense feature pairs. Each tower is
// linear -> relu -> linear -> row L2 normalization.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tempo/autodiff.hpp"
#include "tempo/data.hpp"
#include "tempo/tempnet.hpp"

namespace tempo::models {

struct TowerConfig {
  std::size_t image_dim = 0;
  std::size_t text_dim = 0;
  std::size_t hidden = 64;
  std::size_t embed = 32;

  void validate() const;
  friend bool operator==(const TowerConfig&, const TowerConfig&) = default;
};

struct TowerParams {
  Tensor W1;  // [hidden x in]
  Tensor b1;  // [hidden]
  Tensor W2;  // [embed x hidden]
  Tensor b2;  // [embed]
};

struct TwoTowerParams {
  TowerParams image;
  TowerParams text;

  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
};

struct TwoTower {
  TowerConfig cfg;
  TwoTowerParams params;
};

TwoTower init_two_tower(const TowerConfig& cfg, std::uint64_t seed);

struct TowerVars {
  std::vector<ad::Var> vars;  // params.named() order
};

TowerVars bind(ad::Tape& tape, const TwoTowerParams& params, bool requires_grad);
void collect_grads(const ad::Tape& tape, const TowerVars& vars, TwoTowerParams& out);

struct Embeddings {
  ad::Var images;  // [n x embed], unit rows
  ad::Var texts;
};

Embeddings encode(const TowerConfig& cfg, const TowerVars& vars, const data::PairBatch& batch);
/// Plain-value encoding: {images, texts}.
std::pair<Tensor, Tensor> encode(const TwoTower& model, const data::PairBatch& batch);

/// Mean over pairs of the two -tau * log(exp(pos / tau) / sum_neg exp(neg / tau))
/// terms, negatives being the other n - 1 items of the batch.
ad::Var baseline_gcl_loss(const Embeddings& e, double tau1, double tau2);

struct RobustGcl {
  ad::Var loss;
  ad::Var tau_image;  // [n]
  ad::Var tau_text;   // [n]
};

/// Mean over pairs of f(x_i, tau_i1) + f(t_i, tau_i2) with in-batch negatives
/// as contrasts; temperatures from two TempNets on detached embeddings.
RobustGcl robust_gcl_loss(const Embeddings& e, const net::TempNetConfig& cfg_img, const net::TempNetVars& tnet_img,
                          const net::TempNetConfig& cfg_txt, const net::TempNetVars& tnet_txt, double rho);

/// Same loss with externally supplied per-pair temperatures.
ad::Var robust_gcl_loss(const Embeddings& e, ad::Var tau_image, ad::Var tau_text, double rho);

struct Recall {
  double image_retrieval = 0.0;  // text query, image candidates
  double text_retrieval = 0.0;   // image query, text candidates
};

/// Recall@k from a similarity matrix S[i, j] = <image_i, text_j>. A candidate
/// outranks the true match when its similarity is larger, or equal with a
/// lower index.
Recall recall_at_k(const Tensor& similarity, std::size_t k);
Recall recall_at_k(const TwoTower& model, const data::PairBatch& eval_pairs, std::size_t k);

}  // namespace tempo::models
