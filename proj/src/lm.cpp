#include "tempo/lm.hpp"

#include <cmath>
#include <random>

#include "tempo/error.hpp"
#include "tempo/init.hpp"

namespace tempo::models {

void LmConfig::validate() const {
  if (vocab < 2) throw DomainError("lm: vocabulary needs at least 2 symbols");
  if (d_model == 0 || d_ff == 0 || context == 0) throw DomainError("lm: widths and context must be positive");
}

std::vector<std::pair<std::string, Tensor*>> LmParams::named() {
  return {{"tok_emb", &tok_emb}, {"pos_emb", &pos_emb}, {"Wq", &Wq},       {"Wk", &Wk},
          {"Wv", &Wv},           {"Wo", &Wo},           {"W_ff1", &W_ff1}, {"b_ff1", &b_ff1},
          {"W_ff2", &W_ff2},     {"b_ff2", &b_ff2},     {"W_out", &W_out}, {"b_out", &b_out}};
}

std::vector<std::pair<std::string, const Tensor*>> LmParams::named() const {
  auto mut = const_cast<LmParams*>(this)->named();
  return {mut.begin(), mut.end()};
}

LanguageModel init_lm(const LmConfig& cfg, std::uint64_t seed, bool zero_output) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg.d_model;
  LanguageModel lm{cfg, {}};
  auto& p = lm.params;
  p.tok_emb = normal_init({cfg.vocab, d}, 0.3, rng);
  p.pos_emb = normal_init({cfg.context, d}, 0.3, rng);
  p.Wq = kaiming_uniform({d, d}, d, rng);
  p.Wk = kaiming_uniform({d, d}, d, rng);
  p.Wv = kaiming_uniform({d, d}, d, rng);
  p.Wo = normal_init({d, d}, 0.5 / std::sqrt(double(d)), rng);
  p.W_ff1 = kaiming_uniform({cfg.d_ff, d}, d, rng);
  p.b_ff1 = Tensor({cfg.d_ff});
  p.W_ff2 = normal_init({d, cfg.d_ff}, 0.5 / std::sqrt(double(cfg.d_ff)), rng);
  p.b_ff2 = Tensor({d});
  p.W_out = zero_output ? Tensor({cfg.vocab, d}) : normal_init({cfg.vocab, d}, 1.0 / std::sqrt(double(d)), rng);
  p.b_out = Tensor({cfg.vocab});
  return lm;
}

LmVars bind(ad::Tape& tape, const LmParams& params, bool requires_grad) {
  LmVars v;
  for (const auto& [name, t] : params.named()) v.vars.push_back(tape.leaf(*t, requires_grad));
  return v;
}

void collect_grads(const ad::Tape& tape, const LmVars& vars, LmParams& out) {
  auto named = out.named();
  for (std::size_t i = 0; i < named.size(); ++i) *named[i].second = tape.grad(vars.vars[i]);
}

ad::Var lm_logits(const LmConfig& cfg, const LmVars& vars, const data::TokenBatch& batch) {
  batch.validate(cfg.vocab);
  enum { kTok, kPos, kWq, kWk, kWv, kWo, kFf1, kBf1, kFf2, kBf2, kOut, kBout };
  const auto& v = vars.vars;
  std::vector<std::size_t> tokens, positions, lengths;
  for (const auto& s : batch.sequences) {
    if (s.size() > cfg.context + 1)
      throw DomainError("sequence of " + std::to_string(s.size()) + " tokens exceeds context " +
                        std::to_string(cfg.context));
    lengths.push_back(s.size() - 1);
    for (std::size_t j = 0; j + 1 < s.size(); ++j) {
      tokens.push_back(s[j]);
      positions.push_back(j);
    }
  }
  auto x = ad::add(ad::embedding_lookup(v[kTok], tokens), ad::embedding_lookup(v[kPos], positions));
  auto q = ad::matmul_nt(x, v[kWq]);
  auto k = ad::matmul_nt(x, v[kWk]);
  auto val = ad::matmul_nt(x, v[kWv]);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  std::vector<ad::Var> heads;
  heads.reserve(lengths.size());
  std::size_t offset = 0;
  for (std::size_t m : lengths) {
    auto qs = ad::slice_rows(q, offset, m);
    auto ks = ad::slice_rows(k, offset, m);
    auto vs = ad::slice_rows(val, offset, m);
    auto attn = ad::causal_softmax_rows(ad::scale(ad::matmul_nt(qs, ks), scale));
    heads.push_back(ad::matmul(attn, vs));
    offset += m;
  }
  auto h = ad::add(x, ad::matmul_nt(ad::concat_rows(heads), v[kWo]));
  auto ff = ad::affine(ad::relu(ad::affine(h, v[kFf1], v[kBf1])), v[kFf2], v[kBf2]);
  h = ad::add(h, ff);
  return ad::affine(h, v[kOut], v[kBout]);
}

Tensor lm_logits(const LanguageModel& lm, const data::TokenBatch& batch) {
  ad::Tape tape;
  return lm_logits(lm.cfg, bind(tape, lm.params, false), batch).value();
}

ad::Var baseline_ce_loss(ad::Var logits, const std::vector<std::size_t>& targets) {
  if (logits.value().rows() != targets.size())
    throw ShapeError("baseline_ce_loss: " + std::to_string(targets.size()) + " targets for logits " +
                     logits.value().shape_string());
  return ad::mean(ad::sub(ad::logsumexp_rows(logits), ad::gather_cols(logits, targets)));
}

ad::Var robust_softmax_loss(ad::Var logits, const std::vector<std::size_t>& targets, ad::Var tau, double rho) {
  if (logits.value().rows() != targets.size())
    throw ShapeError("robust_softmax_loss: " + std::to_string(targets.size()) + " targets for logits " +
                     logits.value().shape_string());
  return ad::mean(ad::robust_rows(logits, ad::gather_cols(logits, targets), tau, rho));
}

RobustLoss robust_softmax_loss(ad::Var logits, const std::vector<std::size_t>& targets,
                               const net::TempNetConfig& tcfg, const net::TempNetVars& tvars, double rho) {
  if (tcfg.variant != net::Variant::LlmLogits) throw DomainError("robust_softmax_loss: TempNet must be the llm variant");
  if (tcfg.d0 != logits.value().cols())
    throw DomainError("robust_softmax_loss: TempNet input width " + std::to_string(tcfg.d0) + " != vocabulary " +
                      std::to_string(logits.value().cols()));
  auto tau = net::forward(tcfg, tvars, ad::stop_gradient(logits));
  return {robust_softmax_loss(logits, targets, tau, rho), tau};
}

std::vector<double> temperatures(const TemperatureSource& source, const Tensor& logits) {
  if (source.fixed) {
    if (!(*source.fixed > 0.0)) throw DomainError("temperature must be positive");
    return std::vector<double>(logits.rows(), *source.fixed);
  }
  if (source.tempnet == nullptr) throw DomainError("temperature source is empty");
  ad::Tape tape;
  const auto& net = *source.tempnet;
  return net::forward(net.cfg, net::bind(tape, net.params, false), tape.constant(logits)).value().values();
}

double perplexity(const LanguageModel& lm, const TemperatureSource& source, const std::vector<data::TokenBatch>& corpus) {
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& batch : corpus) {
    const auto logits = lm_logits(lm, batch);
    const auto tau = temperatures(source, logits);
    const auto targets = batch.targets();
    std::vector<double> scaled(logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
      const auto row = logits.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) scaled[j] = row[j] / tau[i];
      nll += dro::stable_logsumexp(scaled) - scaled[targets[i]];
    }
    count += logits.rows();
  }
  if (count == 0) throw DomainError("perplexity of an empty corpus");
  return std::exp(nll / static_cast<double>(count));
}

}  // namespace tempo::models
