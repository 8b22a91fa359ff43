#include "tempo/tempnet.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "tempo/dro.hpp"
#include "tempo/error.hpp"
#include "tempo/init.hpp"

namespace tempo::net {

std::string to_string(Variant v) { return v == Variant::LlmLogits ? "llm" : "cl"; }

void TempNetConfig::validate() const {
  if (d2 < 1 || d1 < d2) throw DomainError("tempnet: need d1 >= d2 >= 1");
  if (variant == Variant::LlmLogits && d0 < d1) throw DomainError("tempnet: LLM variant needs d0 >= d1");
  if (variant == Variant::ClEmbedding && d0 < 1) throw DomainError("tempnet: d0 must be positive");
  if (!(tau0 > 0.0) || !(tau0 < tau_max) || !std::isfinite(tau_max))
    throw DomainError("tempnet: need 0 < tau0 < tau_max");
  if (!(rho > 0.0) || !std::isfinite(rho)) throw DomainError("tempnet: rho must be positive");
}

std::vector<std::pair<std::string, Tensor*>> TempNetParams::named() {
  return {{"W1", &W1}, {"b1", &b1}, {"W2", &W2}, {"w3", &w3}, {"phi", &phi}, {"b", &b}};
}

std::vector<std::pair<std::string, const Tensor*>> TempNetParams::named() const {
  return {{"W1", &W1}, {"b1", &b1}, {"W2", &W2}, {"w3", &w3}, {"phi", &phi}, {"b", &b}};
}

namespace {

TempNet init_common(const TempNetConfig& cfg, std::mt19937_64& rng, double phi) {
  TempNet net{cfg, {}};
  auto& p = net.params;
  p.W1 = kaiming_uniform({cfg.d1, cfg.d0}, cfg.d0, rng);
  p.b1 = Tensor({cfg.d1});
  p.w3 = Tensor({cfg.d2}, 1.0);
  p.phi = Tensor::scalar(phi);
  p.b = Tensor::scalar(0.0);
  return net;
}

}  // namespace

TempNet init_llm_tempnet(const TempNetConfig& cfg, std::uint64_t seed) {
  if (cfg.variant != Variant::LlmLogits) throw DomainError("init_llm_tempnet: variant must be llm");
  cfg.validate();
  std::mt19937_64 rng(seed);
  auto net = init_common(cfg, rng, 1.0);
  net.params.W2 = kaiming_uniform({cfg.d2, cfg.d1}, cfg.d1, rng);
  return net;
}

TempNet init_cl_tempnet(const TempNetConfig& cfg, std::uint64_t seed, const Tensor* samples) {
  if (cfg.variant != Variant::ClEmbedding) throw DomainError("init_cl_tempnet: variant must be cl");
  cfg.validate();
  std::mt19937_64 rng(seed);
  auto net = init_common(cfg, rng, 0.01);
  if (samples == nullptr) {
    net.params.W2 = kaiming_uniform({cfg.d1, cfg.d2}, cfg.d1, rng);
    return net;
  }
  if (samples->rank() != 2 || samples->cols() != cfg.d1)
    throw ShapeError("init_cl_tempnet: samples must be [n x " + std::to_string(cfg.d1) + "], got " +
                     samples->shape_string());
  if (samples->rows() < cfg.d2)
    throw DomainError("init_cl_tempnet: need at least " + std::to_string(cfg.d2) + " sample rows, got " +
                      std::to_string(samples->rows()));
  Tensor w2({cfg.d1, cfg.d2});
  for (std::size_t k = 0; k < cfg.d2; ++k)
    for (std::size_t j = 0; j < cfg.d1; ++j) w2.at(j, k) = samples->at(k, j);
  net.params.W2 = std::move(w2);
  return net;
}

double parameterized_pooling(std::span<const double> u, std::span<const double> w3, double phi,
                             double b, double rho) {
  if (!(phi > 0.0)) throw DomainError("pooling: phi must be positive");
  if (!(rho > 0.0)) throw DomainError("pooling: rho must be positive");
  if (u.empty() || u.size() != w3.size()) throw ShapeError("pooling: u and w3 lengths differ or are empty");
  const std::size_t d = u.size();
  std::vector<double> scaled(d);
  for (std::size_t k = 0; k < d; ++k) scaled[k] = u[k] / phi;
  const double lse = dro::stable_logsumexp(scaled);
  double acc = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double attention = std::exp(scaled[k] - lse) - 1.0 / static_cast<double>(d);
    acc += attention * w3[k] * u[k];
  }
  return (acc - b) / rho;
}

double output_map(double s, double tau0, double tau_max) {
  const double sig = s >= 0.0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
  return tau0 + (tau_max - tau0) * sig;
}

namespace {

std::vector<double> transform(const TempNetParams& p, std::span<const double> x) {
  const std::size_t d1 = p.W1.rows(), d0 = p.W1.cols();
  std::vector<double> v(d1);
  for (std::size_t i = 0; i < d1; ++i) {
    double acc = p.b1[i];
    for (std::size_t j = 0; j < d0; ++j) acc += p.W1.at(i, j) * x[j];
    v[i] = std::max(acc, 0.0);
  }
  return v;
}

std::pair<double, TempNetCache> finish(const TempNet& net, std::vector<double> v, std::vector<double> u) {
  const auto& p = net.params;
  TempNetCache cache;
  cache.s = parameterized_pooling(u, p.w3.span(), p.phi.item(), p.b.item(), net.cfg.rho);
  cache.tau = output_map(cache.s, net.cfg.tau0, net.cfg.tau_max);
  cache.v = std::move(v);
  cache.u = std::move(u);
  return {cache.tau, std::move(cache)};
}

void require_input(const TempNet& net, std::span<const double> x, const char* op) {
  if (x.size() != net.cfg.d0)
    throw ShapeError(std::string(op) + ": expected input of length " + std::to_string(net.cfg.d0) + ", got " +
                     std::to_string(x.size()));
  for (double v : x)
    if (!std::isfinite(v)) throw DomainError(std::string(op) + ": non-finite input");
}

}  // namespace

std::pair<double, TempNetCache> forward_llm(const TempNet& net, std::span<const double> raw_logits) {
  if (net.cfg.variant != Variant::LlmLogits) throw DomainError("forward_llm: variant must be llm");
  require_input(net, raw_logits, "forward_llm");
  double norm = 0.0;
  for (double v : raw_logits) norm += v * v;
  norm = std::sqrt(norm);
  if (norm == 0.0) throw DomainError("forward_llm: zero logit vector cannot be normalized");
  std::vector<double> x(raw_logits.begin(), raw_logits.end());
  for (double& v : x) v /= norm;

  auto v = transform(net.params, x);
  const auto& W2 = net.params.W2;
  std::vector<double> u(net.cfg.d2);
  for (std::size_t k = 0; k < u.size(); ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) acc += W2.at(k, j) * v[j];
    u[k] = acc;
  }
  return finish(net, std::move(v), std::move(u));
}

std::pair<double, TempNetCache> forward_cl(const TempNet& net, std::span<const double> embedding) {
  if (net.cfg.variant != Variant::ClEmbedding) throw DomainError("forward_cl: variant must be cl");
  require_input(net, embedding, "forward_cl");
  double norm = 0.0;
  for (double v : embedding) norm += v * v;
  if (std::abs(std::sqrt(norm) - 1.0) > kUnitTolerance)
    throw DomainError("forward_cl: embedding is not unit norm (norm " + std::to_string(std::sqrt(norm)) + ")");

  auto v = transform(net.params, embedding);
  const auto& W2 = net.params.W2;
  const std::size_t d1 = net.cfg.d1;
  std::vector<double> u(net.cfg.d2);
  for (std::size_t k = 0; k < u.size(); ++k) {
    double col_norm = 0.0, acc = 0.0;
    for (std::size_t j = 0; j < d1; ++j) {
      col_norm += W2.at(j, k) * W2.at(j, k);
      acc += W2.at(j, k) * v[j];
    }
    u[k] = acc / std::max(std::sqrt(col_norm), 1e-12);
  }
  return finish(net, std::move(v), std::move(u));
}

TempNetVars bind(ad::Tape& tape, const TempNetParams& p, bool requires_grad) {
  return {tape.leaf(p.W1, requires_grad), tape.leaf(p.b1, requires_grad), tape.leaf(p.W2, requires_grad),
          tape.leaf(p.w3, requires_grad), tape.leaf(p.phi, requires_grad), tape.leaf(p.b, requires_grad)};
}

ad::Var forward(const TempNetConfig& cfg, const TempNetVars& vars, ad::Var inputs) {
  const auto& x = inputs.value();
  if (x.rank() != 2 || x.cols() != cfg.d0)
    throw ShapeError("tempnet forward: expected [N x " + std::to_string(cfg.d0) + "], got " + x.shape_string());
  if (!(vars.phi.value().item() > 0.0)) throw DomainError("tempnet forward: phi must be positive");

  ad::Var v;
  ad::Var u;
  if (cfg.variant == Variant::LlmLogits) {
    // A zero logit row normalizes to the zero vector here.
    v = ad::relu(ad::affine(ad::l2_normalize(inputs, 1), vars.W1, vars.b1));
    u = ad::matmul_nt(v, vars.W2);
  } else {
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double norm = 0.0;
      for (double e : x.row(i)) norm += e * e;
      if (std::abs(std::sqrt(norm) - 1.0) > kUnitTolerance)
        throw DomainError("tempnet forward: embedding row " + std::to_string(i) + " is not unit norm");
    }
    v = ad::relu(ad::affine(inputs, vars.W1, vars.b1));
    u = ad::matmul(v, ad::l2_normalize(vars.W2, 0));
  }

  const double inv_d2 = 1.0 / static_cast<double>(cfg.d2);
  auto attention = ad::add_const(ad::softmax_rows(ad::div_scalar(u, vars.phi)), -inv_d2);
  auto pooled = ad::sum_rows(ad::scale_cols(ad::mul(attention, u), vars.w3));
  auto s = ad::scale(ad::add_scalar(pooled, ad::scale(vars.b, -1.0)), 1.0 / cfg.rho);
  return ad::add_const(ad::scale(ad::logistic(s), cfg.tau_max - cfg.tau0), cfg.tau0);
}

void collect_grads(const ad::Tape& tape, const TempNetVars& vars, TempNetParams& out) {
  out.W1 = tape.grad(vars.W1);
  out.b1 = tape.grad(vars.b1);
  out.W2 = tape.grad(vars.W2);
  out.w3 = tape.grad(vars.w3);
  out.phi = tape.grad(vars.phi);
  out.b = tape.grad(vars.b);
}

}  // namespace tempo::net
