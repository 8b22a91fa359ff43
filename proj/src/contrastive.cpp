#include "tempo/contrastive.hpp"

#include <cmath>
#include <random>

#include "tempo/error.hpp"
#include "tempo/init.hpp"

namespace tempo::models {

void TowerConfig::validate() const {
  if (image_dim == 0 || text_dim == 0 || hidden == 0 || embed == 0)
    throw DomainError("two-tower: all widths must be positive");
}

std::vector<std::pair<std::string, Tensor*>> TwoTowerParams::named() {
  return {{"image.W1", &image.W1}, {"image.b1", &image.b1}, {"image.W2", &image.W2}, {"image.b2", &image.b2},
          {"text.W1", &text.W1},   {"text.b1", &text.b1},   {"text.W2", &text.W2},   {"text.b2", &text.b2}};
}

std::vector<std::pair<std::string, const Tensor*>> TwoTowerParams::named() const {
  auto mut = const_cast<TwoTowerParams*>(this)->named();
  return {mut.begin(), mut.end()};
}

namespace {

TowerParams init_tower(std::size_t in, const TowerConfig& cfg, std::mt19937_64& rng) {
  return {kaiming_uniform({cfg.hidden, in}, in, rng), Tensor({cfg.hidden}),
          kaiming_uniform({cfg.embed, cfg.hidden}, cfg.hidden, rng), Tensor({cfg.embed})};
}

ad::Var tower(ad::Var x, const ad::Var* v) {
  return ad::l2_normalize(ad::affine(ad::relu(ad::affine(x, v[0], v[1])), v[2], v[3]), 1);
}

}  // namespace

TwoTower init_two_tower(const TowerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  TwoTower m{cfg, {}};
  m.params.image = init_tower(cfg.image_dim, cfg, rng);
  m.params.text = init_tower(cfg.text_dim, cfg, rng);
  return m;
}

TowerVars bind(ad::Tape& tape, const TwoTowerParams& params, bool requires_grad) {
  TowerVars v;
  for (const auto& [name, t] : params.named()) v.vars.push_back(tape.leaf(*t, requires_grad));
  return v;
}

void collect_grads(const ad::Tape& tape, const TowerVars& vars, TwoTowerParams& out) {
  auto named = out.named();
  for (std::size_t i = 0; i < named.size(); ++i) *named[i].second = tape.grad(vars.vars[i]);
}

Embeddings encode(const TowerConfig& cfg, const TowerVars& vars, const data::PairBatch& batch) {
  batch.validate();
  if (batch.images.cols() != cfg.image_dim || batch.texts.cols() != cfg.text_dim)
    throw ShapeError("encode: expected features of width " + std::to_string(cfg.image_dim) + "/" +
                     std::to_string(cfg.text_dim) + ", got " + batch.images.shape_string() + "/" +
                     batch.texts.shape_string());
  auto& tape = vars.vars.front().tape();
  return {tower(tape.constant(batch.images), vars.vars.data()),
          tower(tape.constant(batch.texts), vars.vars.data() + 4)};
}

std::pair<Tensor, Tensor> encode(const TwoTower& model, const data::PairBatch& batch) {
  ad::Tape tape;
  const auto e = encode(model.cfg, bind(tape, model.params, false), batch);
  return {e.images.value(), e.texts.value()};
}

namespace {

struct GclParts {
  ad::Var positive;        // [n]
  ad::Var image_contrast;  // [n x (n - 1)], row i: <image_i, text_j> for j != i
  ad::Var text_contrast;   // [n x (n - 1)], row i: <image_j, text_i> for j != i
};

GclParts gcl_parts(const Embeddings& e) {
  const std::size_t n = e.images.value().rows();
  if (n < 2) throw DomainError("contrastive batch needs at least 2 pairs, got " + std::to_string(n));
  auto s = ad::matmul_nt(e.images, e.texts);
  return {ad::diag(s), ad::offdiag(s), ad::offdiag(ad::transpose(s))};
}

}  // namespace

ad::Var baseline_gcl_loss(const Embeddings& e, double tau1, double tau2) {
  if (!(tau1 > 0.0) || !(tau2 > 0.0)) throw DomainError("baseline_gcl_loss: temperatures must be positive");
  const auto parts = gcl_parts(e);
  auto side = [&](ad::Var contrast, double tau) {
    return ad::sub(ad::scale(ad::logsumexp_rows(ad::scale(contrast, 1.0 / tau)), tau), parts.positive);
  };
  return ad::mean(ad::add(side(parts.image_contrast, tau1), side(parts.text_contrast, tau2)));
}

ad::Var robust_gcl_loss(const Embeddings& e, ad::Var tau_image, ad::Var tau_text, double rho) {
  const auto parts = gcl_parts(e);
  return ad::mean(ad::add(ad::robust_rows(parts.image_contrast, parts.positive, tau_image, rho),
                          ad::robust_rows(parts.text_contrast, parts.positive, tau_text, rho)));
}

RobustGcl robust_gcl_loss(const Embeddings& e, const net::TempNetConfig& cfg_img, const net::TempNetVars& tnet_img,
                          const net::TempNetConfig& cfg_txt, const net::TempNetVars& tnet_txt, double rho) {
  for (const auto* c : {&cfg_img, &cfg_txt}) {
    if (c->variant != net::Variant::ClEmbedding) throw DomainError("robust_gcl_loss: TempNets must be the cl variant");
    if (c->d0 != e.images.value().cols())
      throw DomainError("robust_gcl_loss: TempNet input width " + std::to_string(c->d0) + " != embedding width " +
                        std::to_string(e.images.value().cols()));
  }
  auto tau_image = net::forward(cfg_img, tnet_img, ad::stop_gradient(e.images));
  auto tau_text = net::forward(cfg_txt, tnet_txt, ad::stop_gradient(e.texts));
  return {robust_gcl_loss(e, tau_image, tau_text, rho), tau_image, tau_text};
}

Recall recall_at_k(const Tensor& s, std::size_t k) {
  const std::size_t n = s.rows();
  if (s.rank() != 2 || s.cols() != n || n == 0) throw ShapeError("recall_at_k: need a square similarity matrix");
  if (k == 0 || k > n) throw DomainError("recall_at_k: k must be in [1, " + std::to_string(n) + "]");
  std::size_t ir = 0, tr = 0;
  for (std::size_t q = 0; q < n; ++q) {
    std::size_t ahead_img = 0, ahead_txt = 0;
    for (std::size_t c = 0; c < n; ++c) {
      if (c == q) continue;
      // text query q, image candidate c
      if (s.at(c, q) > s.at(q, q) || (s.at(c, q) == s.at(q, q) && c < q)) ++ahead_img;
      // image query q, text candidate c
      if (s.at(q, c) > s.at(q, q) || (s.at(q, c) == s.at(q, q) && c < q)) ++ahead_txt;
    }
    ir += ahead_img < k;
    tr += ahead_txt < k;
  }
  return {double(ir) / double(n), double(tr) / double(n)};
}

Recall recall_at_k(const TwoTower& model, const data::PairBatch& eval_pairs, std::size_t k) {
  const auto [img, txt] = encode(model, eval_pairs);
  Tensor s({img.rows(), txt.rows()});
  for (std::size_t i = 0; i < img.rows(); ++i)
    for (std::size_t j = 0; j < txt.rows(); ++j) {
      double acc = 0.0;
      for (std::size_t d = 0; d < img.cols(); ++d) acc += img.at(i, d) * txt.at(j, d);
      s.at(i, j) = acc;
    }
  return recall_at_k(s, k);
}

}  // namespace tempo::models
