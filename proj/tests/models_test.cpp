#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "tempo/contrastive.hpp"
#include "tempo/error.hpp"
#include "tempo/lm.hpp"
#include "tempo/solver.hpp"
#include "test_util.hpp"

namespace tempo::models {
namespace {

using data::TokenBatch;

LmConfig small_lm() { return {7, 6, 8, 5}; }

TokenBatch random_batch(std::mt19937_64& rng, std::size_t vocab, std::size_t count, std::size_t len) {
  TokenBatch b;
  for (std::size_t s = 0; s < count; ++s) {
    std::vector<std::size_t> seq(len);
    for (auto& t : seq) t = rng() % vocab;
    b.sequences.push_back(seq);
  }
  return b;
}

net::TempNet small_tempnet(std::size_t vocab, double rho, std::uint64_t seed) {
  return net::init_llm_tempnet({net::Variant::LlmLogits, vocab, 5, 3, 0.001, 2.0, rho}, seed);
}

// ---- language model ---------------------------------------------------------

TEST(LmLogits, ZeroOutputProjectionGivesZeroLogits) {
  const auto lm = init_lm(small_lm(), 1, true);
  std::mt19937_64 rng(2);
  const auto logits = lm_logits(lm, random_batch(rng, 7, 3, 6));
  EXPECT_EQ(logits.shape(), (std::vector<std::size_t>{15, 7}));
  for (double v : logits.values()) EXPECT_EQ(v, 0.0);
}

TEST(LmLogits, BatchPermutationPermutesOutputs) {
  const auto lm = init_lm(small_lm(), 3);
  std::mt19937_64 rng(4);
  const auto batch = random_batch(rng, 7, 3, 6);
  TokenBatch swapped{{batch.sequences[2], batch.sequences[0], batch.sequences[1]}};
  const auto a = lm_logits(lm, batch), b = lm_logits(lm, swapped);
  for (std::size_t p = 0; p < 5; ++p)
    for (std::size_t j = 0; j < 7; ++j) {
      // Kernel blocking may round rows differently by position.
      EXPECT_NEAR(a.at(p, j), b.at(5 + p, j), 1e-12);
      EXPECT_NEAR(a.at(5 + p, j), b.at(10 + p, j), 1e-12);
      EXPECT_NEAR(a.at(10 + p, j), b.at(p, j), 1e-12);
    }
}

TEST(LmLogits, Causality) {
  const auto lm = init_lm(small_lm(), 5);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    auto batch = random_batch(rng, 7, 1, 6);
    const auto base = lm_logits(lm, batch);
    const std::size_t j = rng() % 4;
    batch.sequences[0][j + 1] = (batch.sequences[0][j + 1] + 1 + rng() % 6) % 7;
    const auto perturbed = lm_logits(lm, batch);
    for (std::size_t p = 0; p <= j; ++p)
      for (std::size_t c = 0; c < 7; ++c) EXPECT_EQ(base.at(p, c), perturbed.at(p, c));
  }
}

TEST(LmLogits, OutOfRangeIdIsDomainError) {
  const auto lm = init_lm(small_lm(), 1);
  EXPECT_THROW(lm_logits(lm, TokenBatch{{{1, 2, 7}}}), DomainError);
  EXPECT_THROW(lm_logits(lm, TokenBatch{{{1}}}), DomainError);
  EXPECT_THROW(lm_logits(lm, TokenBatch{{{1, 2, 3, 4, 5, 6, 0}}}), DomainError);
}

TEST(LmLogits, PositionLogitSumGradientsMatchFiniteDifferences) {
  const auto lm = init_lm(small_lm(), 7);
  std::mt19937_64 rng(8);
  const auto batch = random_batch(rng, 7, 2, 6);
  const auto named = lm.params.named();
  for (std::size_t w = 0; w < named.size(); ++w) {
    auto fn = [&](ad::Tape& tape, ad::Var p) {
      auto vars = bind(tape, lm.params, false);
      vars.vars[w] = p;
      return ad::sum(ad::slice_rows(lm_logits(lm.cfg, vars, batch), 3, 1));
    };
    EXPECT_LE(ad::finite_diff_check(fn, *named[w].second), 1e-5) << named[w].first;
  }
}

TEST(BaselineCe, ZeroLogitsGiveLogK) {
  ad::Tape t;
  const auto loss = baseline_ce_loss(t.constant(Tensor({4, 9})), {0, 3, 8, 2});
  EXPECT_NEAR(loss.value().item(), std::log(9.0), 1e-15);
}

TEST(BaselineCe, ConfidentTargetIsNearZero) {
  Tensor logits({2, 5});
  logits.at(0, 1) = 30.0;
  logits.at(1, 4) = 30.0;
  ad::Tape t;
  EXPECT_LE(baseline_ce_loss(t.constant(logits), {1, 4}).value().item(), 1e-12);
}

TEST(BaselineCe, MatchesIndependentValue) {
  // 40-digit per-token softmax NLL.
  ad::Tape t;
  const auto logits = Tensor::matrix(3, 4, {0.5, -1.0, 2.0, 0.3, 1.5, 1.5, -0.2, 0.0, -2.0, 0.7, 0.1, 3.1});
  EXPECT_NEAR(baseline_ce_loss(t.constant(logits), {2, 0, 3}).value().item(), 0.46336982132453780587, 1e-10);
}

TEST(RobustSoftmax, ZeroLogitRowContributesRhoTau) {
  const double rho = 1.7;
  const auto tn = small_tempnet(7, rho, 9);
  ad::Tape t;
  const auto r = robust_softmax_loss(t.constant(Tensor({1, 7})), {3}, tn.cfg, net::bind(t, tn.params, false), rho);
  EXPECT_NEAR(r.loss.value().item(), rho * r.tau.value()[0], 1e-15);
}

TEST(RobustSoftmax, BridgeToCrossEntropy) {
  const auto lm = init_lm(small_lm(), 10);
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const auto batch = random_batch(rng, 7, 3, 6);
    ad::Tape t;
    auto logits = lm_logits(lm.cfg, bind(t, lm.params, false), batch);
    const auto targets = batch.targets();
    const double robust =
        robust_softmax_loss(logits, targets, t.constant(Tensor({targets.size()}, 1.0)), 0.0).value().item();
    const double ce = baseline_ce_loss(logits, targets).value().item();
    EXPECT_NEAR(robust, ce - std::log(7.0), 1e-10);
  }
}

TEST(RobustSoftmax, VocabularyMismatchIsDomainError) {
  const auto tn = small_tempnet(8, 1.0, 1);
  ad::Tape t;
  EXPECT_THROW(robust_softmax_loss(t.constant(Tensor({2, 7})), {0, 1}, tn.cfg, net::bind(t, tn.params, false), 1.0),
               DomainError);
}

TEST(RobustSoftmax, AllGradientsMatchFiniteDifferences) {
  const double rho = 0.8;
  const auto lm = init_lm(small_lm(), 12);
  auto tn = small_tempnet(7, rho, 13);
  std::mt19937_64 rng(14);
  for (auto& [name, p] : tn.params.named())
    if (name != "phi") for (double& v : p->values()) v = testing::uniform(rng, -1.0, 1.0);
  const auto batch = random_batch(rng, 7, 2, 5);
  const auto targets = batch.targets();

  // The detached TempNet input makes the model gradient a partial derivative
  // with tau held at its current values, so differences are taken that way.
  Tensor tau_now;
  {
    ad::Tape tape;
    tau_now = robust_softmax_loss(lm_logits(lm.cfg, bind(tape, lm.params, false), batch), targets, tn.cfg,
                                  net::bind(tape, tn.params, false), rho)
                  .tau.value();
  }
  const auto lm_named = lm.params.named();
  for (std::size_t w = 0; w < lm_named.size(); ++w) {
    auto fn = [&](ad::Tape& tape, ad::Var p) {
      auto vars = bind(tape, lm.params, false);
      vars.vars[w] = p;
      return robust_softmax_loss(lm_logits(lm.cfg, vars, batch), targets, tape.constant(tau_now), rho);
    };
    EXPECT_LE(ad::finite_diff_check(fn, *lm_named[w].second), 1e-5) << lm_named[w].first;
  }
  const auto tn_named = tn.params.named();
  for (std::size_t w = 0; w < tn_named.size(); ++w) {
    auto fn = [&](ad::Tape& tape, ad::Var p) {
      auto tv = net::bind(tape, tn.params, false);
      ad::Var* slots[] = {&tv.W1, &tv.b1, &tv.W2, &tv.w3, &tv.phi, &tv.b};
      *slots[w] = p;
      return robust_softmax_loss(lm_logits(lm.cfg, bind(tape, lm.params, false), batch), targets, tn.cfg, tv, rho).loss;
    };
    EXPECT_LE(ad::finite_diff_check(fn, *tn_named[w].second), 1e-5) << tn_named[w].first;
  }
}

TEST(RobustSoftmax, StopGradientContract) {
  const double rho = 1.1;
  const auto lm = init_lm(small_lm(), 15);
  const auto tn = small_tempnet(7, rho, 16);
  std::mt19937_64 rng(17);
  const auto batch = random_batch(rng, 7, 3, 6);
  const auto targets = batch.targets();

  ad::Tape a;
  auto va = bind(a, lm.params, true);
  auto ra = robust_softmax_loss(lm_logits(lm.cfg, va, batch), targets, tn.cfg, net::bind(a, tn.params, true), rho);
  a.backward(ra.loss);

  ad::Tape b;
  auto vb = bind(b, lm.params, true);
  auto frozen = b.constant(ra.tau.value());
  b.backward(robust_softmax_loss(lm_logits(lm.cfg, vb, batch), targets, frozen, rho));

  for (std::size_t w = 0; w < va.vars.size(); ++w) {
    const auto ga = a.grad(va.vars[w]), gb = b.grad(vb.vars[w]);
    for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_NEAR(ga[i], gb[i], 1e-10);
  }
}

TEST(RobustSoftmax, NetworkLossBoundsPerPositionMinimum) {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 10; ++trial) {
    const double rho = testing::uniform(rng, 0.2, 1.8);
    const auto lm = init_lm(small_lm(), 100 + trial);
    const auto tn = small_tempnet(7, rho, 200 + trial);
    const auto batch = random_batch(rng, 7, 3, 6);
    const auto targets = batch.targets();
    ad::Tape t;
    auto logits = lm_logits(lm.cfg, bind(t, lm.params, false), batch);
    const double network = robust_softmax_loss(logits, targets, tn.cfg, net::bind(t, tn.params, false), rho)
                               .loss.value()
                               .item();
    const dro::DroConfig dcfg{0.001, 2.0, rho};
    double optimal = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const auto row = logits.value().row(i);
      dro::LogitSet ls{row[targets[i]], {row.begin(), row.end()}};
      optimal += dro::robust_loss(ls, solver::newton_solve(ls, dcfg).tau, dcfg);
    }
    EXPECT_GE(network - optimal / double(targets.size()), -1e-9);
  }
}

TEST(Perplexity, UniformModelGivesVocabularySize) {
  const auto lm = init_lm(small_lm(), 19, true);
  std::mt19937_64 rng(20);
  const std::vector<TokenBatch> corpus = {random_batch(rng, 7, 2, 6), random_batch(rng, 7, 1, 4)};
  EXPECT_NEAR(perplexity(lm, TemperatureSource::constant(1.0), corpus), 7.0, 1e-12);
  EXPECT_NEAR(perplexity(lm, TemperatureSource::constant(0.2), corpus), 7.0, 1e-12);
  const auto tn = small_tempnet(7, 1.0, 21);
  EXPECT_NEAR(perplexity(lm, TemperatureSource::network(tn), corpus), 7.0, 1e-12);
}

TEST(Perplexity, LargeTemperatureFlattensTowardVocabularySize) {
  const auto lm = init_lm(small_lm(), 22);
  std::mt19937_64 rng(23);
  const std::vector<TokenBatch> corpus = {random_batch(rng, 7, 3, 6)};
  const double far = perplexity(lm, TemperatureSource::constant(1e6), corpus);
  EXPECT_NEAR(far, 7.0, 1e-4);
  EXPECT_LT(std::abs(far - 7.0), std::abs(perplexity(lm, TemperatureSource::constant(10.0), corpus) - 7.0));
}

TEST(Perplexity, MatchesIndependentValue) {
  // A model whose logits equal a fixed matrix: zero embeddings and weights,
  // output bias only, is position-independent, so use one-row sequences.
  auto lm = init_lm({4, 2, 2, 2}, 1, true);
  const std::vector<std::vector<double>> rows = {{0.5, -1.0, 2.0, 0.3}, {1.5, 1.5, -0.2, 0.0}, {-2.0, 0.7, 0.1, 3.1}};
  const std::vector<std::size_t> targets = {2, 0, 3};
  const std::vector<double> taus = {0.5, 1.0, 2.0};
  double nll = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    lm.params.b_out = Tensor::vector(rows[i]);
    const std::vector<TokenBatch> one = {TokenBatch{{{0, targets[i]}}}};
    nll += std::log(perplexity(lm, TemperatureSource::constant(taus[i]), one));
  }
  // 40-digit exp of the mean temperature-scaled NLL.
  EXPECT_NEAR(std::exp(nll / 3.0), 1.6115360014935904655, 1e-8);
}

TEST(Perplexity, EmptyCorpusIsDomainError) {
  const auto lm = init_lm(small_lm(), 1);
  EXPECT_THROW(perplexity(lm, TemperatureSource::constant(1.0), {}), DomainError);
}

// ---- contrastive ------------------------------------------------------------

Embeddings constant_embeddings(ad::Tape& t, std::size_t n, std::size_t d, std::vector<double> img,
                               std::vector<double> txt) {
  return {t.constant(Tensor::matrix(n, d, std::move(img))), t.constant(Tensor::matrix(n, d, std::move(txt)))};
}

TEST(BaselineGcl, IdenticalEmbeddings) {
  ad::Tape t;
  const std::size_t n = 6;
  std::vector<double> same;
  for (std::size_t i = 0; i < n; ++i) same.insert(same.end(), {0.6, 0.8});
  const auto e = constant_embeddings(t, n, 2, same, same);
  EXPECT_NEAR(baseline_gcl_loss(e, 0.3, 0.3).value().item(), 2.0 * 0.3 * std::log(5.0), 1e-14);
}

TEST(BaselineGcl, TwoOrthogonalPairs) {
  ad::Tape t;
  const auto e = constant_embeddings(t, 2, 2, {1, 0, 0, 1}, {1, 0, 0, 1});
  EXPECT_NEAR(baseline_gcl_loss(e, 1.0, 1.0).value().item(), -2.0, 1e-15);
}

TEST(BaselineGcl, MatchesIndependentValue) {
  ad::Tape t;
  const auto e = constant_embeddings(
      t, 5, 3, {0.6, 0.8, 0.0, 0.0, 0.6, 0.8, 0.8, 0.0, 0.6, 0.48, 0.6, 0.64, 1.0, 0.0, 0.0},
      {0.0, 1.0, 0.0, 0.6, 0.0, 0.8, 0.8, 0.6, 0.0, 0.0, 0.0, 1.0, 0.6, 0.48, 0.64});
  // 40-digit evaluation of the two-way loss with negative-only denominators.
  EXPECT_NEAR(baseline_gcl_loss(e, 0.7, 0.4).value().item(), 1.4891091146705200871, 1e-10);
}

TEST(BaselineGcl, SinglePairIsDomainError) {
  ad::Tape t;
  const auto e = constant_embeddings(t, 1, 2, {1, 0}, {1, 0});
  EXPECT_THROW(baseline_gcl_loss(e, 1.0, 1.0), DomainError);
}

TowerConfig small_towers() { return {5, 4, 6, 3}; }

net::TempNet cl_tempnet(double rho, std::uint64_t seed) {
  return net::init_cl_tempnet({net::Variant::ClEmbedding, 3, 4, 2, 0.001, 2.0, rho}, seed);
}

data::PairBatch random_pairs(std::mt19937_64& rng, std::size_t n) {
  return {Tensor::matrix(n, 5, testing::normal_vector(rng, n * 5)), Tensor::matrix(n, 4, testing::normal_vector(rng, n * 4))};
}

TEST(RobustGcl, IdenticalEmbeddingsGiveRhoTimesTemperatures) {
  const double rho = 0.9;
  const auto a = cl_tempnet(rho, 1), b = cl_tempnet(rho, 2);
  ad::Tape t;
  std::vector<double> same;
  for (int i = 0; i < 4; ++i) same.insert(same.end(), {0.0, 0.6, 0.8});
  const auto e = constant_embeddings(t, 4, 3, same, same);
  const auto r = robust_gcl_loss(e, a.cfg, net::bind(t, a.params, false), b.cfg, net::bind(t, b.params, false), rho);
  double expected = 0.0;
  for (std::size_t i = 0; i < 4; ++i) expected += rho * (r.tau_image.value()[i] + r.tau_text.value()[i]);
  EXPECT_NEAR(r.loss.value().item(), expected / 4.0, 1e-14);
}

TEST(RobustGcl, BridgeToBaseline) {
  const auto model = init_two_tower(small_towers(), 3);
  std::mt19937_64 rng(4);
  for (std::size_t n : {2u, 5u, 9u}) {
    const auto batch = random_pairs(rng, n);
    ad::Tape t;
    const auto e = encode(model.cfg, bind(t, model.params, false), batch);
    for (double tau : {0.05, 0.5, 1.7}) {
      const double robust =
          robust_gcl_loss(e, t.constant(Tensor({n}, tau)), t.constant(Tensor({n}, tau)), 0.0).value().item();
      const double base = baseline_gcl_loss(e, tau, tau).value().item();
      EXPECT_NEAR(robust, base - 2.0 * tau * std::log(double(n - 1)), 1e-10);
    }
  }
}

TEST(RobustGcl, AllGradientsMatchFiniteDifferences) {
  const double rho = 0.6;
  const auto model = init_two_tower(small_towers(), 5);
  auto ti = cl_tempnet(rho, 6), tt = cl_tempnet(rho, 7);
  std::mt19937_64 rng(8);
  for (auto* tn : {&ti, &tt})
    for (auto& [name, p] : tn->params.named())
      if (name != "phi") for (double& v : p->values()) v = testing::uniform(rng, -1.0, 1.0);
  ti.params.phi[0] = tt.params.phi[0] = 0.5;
  const auto batch = random_pairs(rng, 4);

  // Tower gradients are partial derivatives at fixed tau (detached TempNet input).
  Tensor tau_img, tau_txt;
  {
    ad::Tape tape;
    const auto r = robust_gcl_loss(encode(model.cfg, bind(tape, model.params, false), batch), ti.cfg,
                                   net::bind(tape, ti.params, false), tt.cfg, net::bind(tape, tt.params, false), rho);
    tau_img = r.tau_image.value();
    tau_txt = r.tau_text.value();
  }
  const auto named = model.params.named();
  for (std::size_t w = 0; w < named.size(); ++w) {
    auto fn = [&](ad::Tape& tape, ad::Var p) {
      auto vars = bind(tape, model.params, false);
      vars.vars[w] = p;
      return robust_gcl_loss(encode(model.cfg, vars, batch), tape.constant(tau_img), tape.constant(tau_txt), rho);
    };
    EXPECT_LE(ad::finite_diff_check(fn, *named[w].second), 1e-5) << named[w].first;
  }
  for (int side = 0; side < 2; ++side) {
    const auto& tn = side == 0 ? ti : tt;
    const auto tn_named = tn.params.named();
    for (std::size_t w = 0; w < tn_named.size(); ++w) {
      auto fn = [&](ad::Tape& tape, ad::Var p) {
        auto vi = net::bind(tape, ti.params, false), vt = net::bind(tape, tt.params, false);
        auto& tv = side == 0 ? vi : vt;
        ad::Var* slots[] = {&tv.W1, &tv.b1, &tv.W2, &tv.w3, &tv.phi, &tv.b};
        *slots[w] = p;
        const auto e = encode(model.cfg, bind(tape, model.params, false), batch);
        return robust_gcl_loss(e, ti.cfg, vi, tt.cfg, vt, rho).loss;
      };
      EXPECT_LE(ad::finite_diff_check(fn, *tn_named[w].second), 1e-5) << side << " " << tn_named[w].first;
    }
  }
}

TEST(RobustGcl, StopGradientContract) {
  const double rho = 0.7;
  const auto model = init_two_tower(small_towers(), 9);
  const auto ti = cl_tempnet(rho, 10), tt = cl_tempnet(rho, 11);
  std::mt19937_64 rng(12);
  const auto batch = random_pairs(rng, 6);

  ad::Tape a;
  auto va = bind(a, model.params, true);
  auto ra = robust_gcl_loss(encode(model.cfg, va, batch), ti.cfg, net::bind(a, ti.params, true), tt.cfg,
                            net::bind(a, tt.params, true), rho);
  a.backward(ra.loss);

  ad::Tape b;
  auto vb = bind(b, model.params, true);
  b.backward(robust_gcl_loss(encode(model.cfg, vb, batch), b.constant(ra.tau_image.value()),
                             b.constant(ra.tau_text.value()), rho));
  for (std::size_t w = 0; w < va.vars.size(); ++w) {
    const auto ga = a.grad(va.vars[w]), gb = b.grad(vb.vars[w]);
    for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_NEAR(ga[i], gb[i], 1e-10);
  }
}

TEST(Encode, OutputsAreUnitNorm) {
  const auto model = init_two_tower(small_towers(), 13);
  std::mt19937_64 rng(14);
  const auto [img, txt] = encode(model, random_pairs(rng, 10));
  for (const auto* m : {&img, &txt})
    for (std::size_t i = 0; i < 10; ++i) {
      double norm = 0.0;
      for (double v : m->row(i)) norm += v * v;
      EXPECT_NEAR(norm, 1.0, 1e-12);
    }
}

// Brute-force ranking: sort candidates by (similarity desc, index asc).
std::pair<double, double> ranking_oracle(const Tensor& s, std::size_t k) {
  const std::size_t n = s.rows();
  double ir = 0.0, tr = 0.0;
  for (std::size_t q = 0; q < n; ++q) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.at(a, q) > s.at(b, q); });
    ir += std::find(order.begin(), order.begin() + long(k), q) != order.begin() + long(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.at(q, a) > s.at(q, b); });
    tr += std::find(order.begin(), order.begin() + long(k), q) != order.begin() + long(k);
  }
  return {ir / double(n), tr / double(n)};
}

TEST(Recall, IdentitySimilarity) {
  Tensor s({6, 6});
  for (std::size_t i = 0; i < 6; ++i) s.at(i, i) = 1.0;
  const auto r = recall_at_k(s, 1);
  EXPECT_EQ(r.image_retrieval, 1.0);
  EXPECT_EQ(r.text_retrieval, 1.0);
}

TEST(Recall, KEqualsNIsPerfect) {
  std::mt19937_64 rng(15);
  const auto s = Tensor::matrix(7, 7, testing::normal_vector(rng, 49));
  const auto r = recall_at_k(s, 7);
  EXPECT_EQ(r.image_retrieval, 1.0);
  EXPECT_EQ(r.text_retrieval, 1.0);
  EXPECT_THROW(recall_at_k(s, 8), DomainError);
}

TEST(Recall, MatchesBruteForceRanking) {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 200; ++trial) {
    auto v = testing::normal_vector(rng, 25);
    if (trial % 2 == 1)
      for (double& x : v) x = std::round(x);  // ties
    const auto s = Tensor::matrix(5, 5, v);
    for (std::size_t k = 1; k <= 5; ++k) {
      const auto r = recall_at_k(s, k);
      const auto [ir, tr] = ranking_oracle(s, k);
      EXPECT_EQ(r.image_retrieval, ir);
      EXPECT_EQ(r.text_retrieval, tr);
    }
  }
}

// ---- data ---------------------------------------------------------------------

TEST(Data, Utf8RoundTrip) {
  const std::string text = "a\xC3\xA9\xE2\x82\xAC\xF0\x9F\x98\x80z";
  const auto cps = data::decode_utf8(text);
  EXPECT_EQ(cps, (std::vector<char32_t>{U'a', 0xE9, 0x20AC, 0x1F600, U'z'}));
  EXPECT_EQ(data::encode_utf8(std::u32string(cps.begin(), cps.end())), text);
  EXPECT_THROW(data::decode_utf8("\xC3"), ValidationError);
  EXPECT_THROW(data::decode_utf8("\xC3("), ValidationError);
}

TEST(Data, VocabIsSortedAndEncodes) {
  const auto v = data::Vocab::build(data::decode_utf8("hello"));
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.encode(data::decode_utf8("hole")), (std::vector<std::size_t>{1, 3, 2, 0}));
  EXPECT_THROW(v.id(U'z'), DomainError);
}

TEST(Data, Windows) {
  std::vector<std::size_t> ids(50);
  std::iota(ids.begin(), ids.end(), 0);
  const auto seq = data::sequential_windows(ids, 8, 2);
  ASSERT_EQ(seq.size(), 3u);
  EXPECT_EQ(seq[0].sequences[1].front(), 8u);
  EXPECT_EQ(seq[2].sequences.size(), 2u);
  EXPECT_EQ(seq[2].sequences.back().back(), 48u);
  std::mt19937_64 rng(1);
  const auto rnd = data::sample_windows(ids, 8, 4, rng);
  for (const auto& s : rnd.sequences) {
    ASSERT_EQ(s.size(), 9u);
    for (std::size_t j = 1; j < s.size(); ++j) EXPECT_EQ(s[j], s[j - 1] + 1);
  }
}

TEST(Data, PairsCsvRoundTrip) {
  const auto pairs = data::generate_pairs({12, 3, 2, 4, 3, 0.5, 0.1, 0.5}, 7);
  const auto path = std::filesystem::temp_directory_path() / "tempo_pairs_roundtrip.csv";
  data::write_pairs_csv(pairs, path);
  const auto back = data::read_pairs_csv(path);
  EXPECT_EQ(back.images, pairs.images);
  EXPECT_EQ(back.texts, pairs.texts);
  std::filesystem::remove(path);
}

TEST(Data, PairsCsvErrorsNameTheLine) {
  const auto path = std::filesystem::temp_directory_path() / "tempo_pairs_bad.csv";
  std::ofstream(path) << "img_0,txt_0\n1.0,2.0\n1.0,abc\n";
  try {
    data::read_pairs_csv(path);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos);
  }
  std::filesystem::remove(path);
  EXPECT_THROW(data::read_pairs_csv(path), IoError);
}

TEST(Data, GeneratorIsDeterministic) {
  const data::PairGenConfig cfg{20, 4, 3, 2, 2, 0.5, 0.1, 0.3};
  EXPECT_EQ(data::generate_pairs(cfg, 3).images, data::generate_pairs(cfg, 3).images);
  EXPECT_NE(data::generate_pairs(cfg, 3).texts, data::generate_pairs(cfg, 4).texts);
}

}  // namespace
}  // namespace tempo::models
