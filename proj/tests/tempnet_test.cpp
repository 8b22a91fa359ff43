#include "tempo/tempnet.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "tempo/error.hpp"
#include "tempo/solver.hpp"
#include "test_util.hpp"

namespace tempo::net {
namespace {

TempNetConfig llm_cfg(std::size_t d0 = 32, std::size_t d1 = 16, std::size_t d2 = 8) {
  return {Variant::LlmLogits, d0, d1, d2, 0.001, 2.0, 10.0};
}

TempNetConfig cl_cfg(std::size_t d0 = 12, std::size_t d1 = 10, std::size_t d2 = 6) {
  return {Variant::ClEmbedding, d0, d1, d2, 0.001, 2.0, 1.5};
}

std::vector<double> unit_vector(std::mt19937_64& rng, std::size_t n) {
  auto v = testing::normal_vector(rng, n);
  double norm = 0.0;
  for (double x : v) norm += x * x;
  for (double& x : v) x /= std::sqrt(norm);
  return v;
}

void randomize(TempNetParams& p, std::mt19937_64& rng) {
  for (auto& [name, t] : p.named()) {
    if (name == "phi") continue;
    for (double& v : t->values()) v = testing::uniform(rng, -1.0, 1.0);
  }
  p.phi[0] = testing::uniform(rng, 0.3, 2.0);
}

TEST(Init, LlmShapesAndConstants) {
  const auto net = init_llm_tempnet(llm_cfg(), 1);
  EXPECT_EQ(net.params.W1.shape(), (std::vector<std::size_t>{16, 32}));
  EXPECT_EQ(net.params.W2.shape(), (std::vector<std::size_t>{8, 16}));
  EXPECT_EQ(net.params.w3.values(), std::vector<double>(8, 1.0));
  EXPECT_EQ(net.params.b.item(), 0.0);
  EXPECT_EQ(net.params.phi.item(), 1.0);
}

TEST(Init, DeterministicGivenSeed) {
  EXPECT_EQ(init_llm_tempnet(llm_cfg(), 5).params.W1, init_llm_tempnet(llm_cfg(), 5).params.W1);
  EXPECT_NE(init_llm_tempnet(llm_cfg(), 5).params.W1, init_llm_tempnet(llm_cfg(), 6).params.W1);
}

TEST(Init, VariantMismatchIsDomainError) {
  EXPECT_THROW(init_llm_tempnet(cl_cfg(), 1), DomainError);
  EXPECT_THROW(init_cl_tempnet(llm_cfg(), 1), DomainError);
}

TEST(Init, InvalidWidthsRejected) {
  EXPECT_THROW(init_llm_tempnet(llm_cfg(8, 16, 4), 1), DomainError);
  EXPECT_THROW(init_cl_tempnet(cl_cfg(12, 4, 6), 1), DomainError);
}

TEST(Init, LlmForwardAtInitStaysInsideRange) {
  const auto net = init_llm_tempnet(llm_cfg(), 2);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto [tau, cache] = forward_llm(net, testing::normal_vector(rng, 32, 3.0));
    EXPECT_GT(tau, 0.001);
    EXPECT_LT(tau, 2.0);
  }
}

TEST(Init, ClWithoutSamplesUsesSmallPhi) {
  const auto net = init_cl_tempnet(cl_cfg(), 4);
  EXPECT_EQ(net.params.phi.item(), 0.01);
  EXPECT_EQ(net.params.w3.values(), std::vector<double>(6, 1.0));
  EXPECT_EQ(net.params.b.item(), 0.0);
  EXPECT_EQ(net.params.W2.shape(), (std::vector<std::size_t>{10, 6}));
  std::mt19937_64 rng(5);
  const auto [tau, cache] = forward_cl(net, unit_vector(rng, 12));
  EXPECT_GT(tau, 0.001);
  EXPECT_LT(tau, 2.0);
}

TEST(Init, ClSamplesBecomePrototypeColumns) {
  std::mt19937_64 rng(6);
  const auto samples = Tensor::matrix(6, 10, testing::normal_vector(rng, 60));
  const auto net = init_cl_tempnet(cl_cfg(), 4, &samples);
  for (std::size_t k = 0; k < 6; ++k)
    for (std::size_t j = 0; j < 10; ++j) EXPECT_EQ(net.params.W2.at(j, k), samples.at(k, j));
}

TEST(Init, ClTooFewSamplesIsDomainError) {
  const auto samples = Tensor::matrix(5, 10, std::vector<double>(50, 1.0));
  EXPECT_THROW(init_cl_tempnet(cl_cfg(), 4, &samples), DomainError);
}

TEST(Pooling, ConstantUGivesMinusBOverRho) {
  const std::vector<double> u(5, 0.8), w3 = {1, 2, 3, 4, 5};
  EXPECT_NEAR(parameterized_pooling(u, w3, 0.3, 0.6, 1.5), -0.4, 1e-15);
}

TEST(Pooling, SingleWeightIsZero) {
  const std::vector<double> u = {3.0}, w3 = {1.0};
  EXPECT_EQ(parameterized_pooling(u, w3, 1.0, 0.0, 2.0), 0.0);
}

TEST(Pooling, MatchesIndependentEvaluation) {
  // 40-digit re-evaluation of the pooling formula.
  const std::vector<double> u = {0.3, -1.2, 2.5, 0.7, -0.4}, w3 = {1.0, 0.5, -0.8, 2.0, 1.5};
  EXPECT_NEAR(parameterized_pooling(u, w3, 0.7, 0.25, 1.3), -1.2380204659653135614, 1e-12);
  EXPECT_NEAR(output_map(-1.2380204659653135614, 0.001, 2.0), 0.45033669971677222723, 1e-12);
}

TEST(Pooling, RejectsNonPositivePhiOrRho) {
  const std::vector<double> u = {1.0, 2.0}, w3 = {1.0, 1.0};
  EXPECT_THROW(parameterized_pooling(u, w3, 0.0, 0.0, 1.0), DomainError);
  EXPECT_THROW(parameterized_pooling(u, w3, 1.0, 0.0, 0.0), DomainError);
}

TEST(OutputMap, MidpointAndSaturation) {
  EXPECT_EQ(output_map(0.0, 0.001, 2.0), (0.001 + 2.0) / 2.0);
  EXPECT_NEAR(output_map(50.0, 0.001, 2.0), 2.0, 1e-12);
  EXPECT_NEAR(output_map(-50.0, 0.001, 2.0), 0.001, 1e-12);
}

TEST(OutputMap, StrictlyIncreasing) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 10000; ++i) {
    double a = testing::uniform(rng, -30.0, 30.0), b = testing::uniform(rng, -30.0, 30.0);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    EXPECT_LT(output_map(a, 0.001, 2.0), output_map(b, 0.001, 2.0));
  }
}

TEST(ForwardLlm, ZeroPooledScalarGivesMidpoint) {
  auto net = init_llm_tempnet(llm_cfg(), 8);
  net.params.w3.values().assign(8, 0.0);
  std::mt19937_64 rng(9);
  const auto [tau, cache] = forward_llm(net, testing::normal_vector(rng, 32));
  EXPECT_EQ(cache.s, 0.0);
  EXPECT_EQ(tau, 1.0005);
}

TEST(ForwardLlm, PositiveScaleInvariance) {
  const auto net = init_llm_tempnet(llm_cfg(), 10);
  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    auto l = testing::normal_vector(rng, 32);
    auto scaled = l;
    for (double& v : scaled) v *= 3.7;
    EXPECT_NEAR(forward_llm(net, l).first, forward_llm(net, scaled).first, 1e-15);
  }
}

TEST(ForwardLlm, ZeroVectorIsDomainError) {
  const auto net = init_llm_tempnet(llm_cfg(), 10);
  EXPECT_THROW(forward_llm(net, std::vector<double>(32, 0.0)), DomainError);
  EXPECT_THROW(forward_llm(net, std::vector<double>(31, 1.0)), ShapeError);
}

TEST(ForwardCl, PrototypeLogitsBoundedByTransformNorm) {
  auto net = init_cl_tempnet(cl_cfg(), 12);
  std::mt19937_64 rng(13);
  randomize(net.params, rng);
  for (int i = 0; i < 200; ++i) {
    const auto [tau, cache] = forward_cl(net, unit_vector(rng, 12));
    double vnorm = 0.0;
    for (double v : cache.v) vnorm += v * v;
    for (double u : cache.u) EXPECT_LE(std::abs(u), std::sqrt(vnorm) + 1e-12);
  }
}

TEST(ForwardCl, ZeroW3GivesConstantPooling) {
  auto net = init_cl_tempnet(cl_cfg(), 14);
  net.params.w3.values().assign(6, 0.0);
  net.params.b[0] = 0.9;
  std::mt19937_64 rng(15);
  for (int i = 0; i < 20; ++i) EXPECT_NEAR(forward_cl(net, unit_vector(rng, 12)).second.s, -0.9 / 1.5, 1e-15);
}

TEST(ForwardCl, NonUnitEmbeddingIsDomainError) {
  const auto net = init_cl_tempnet(cl_cfg(), 14);
  EXPECT_THROW(forward_cl(net, std::vector<double>(12, 1.0)), DomainError);
}

TEST(Batched, MatchesSingleInstanceForward) {
  std::mt19937_64 rng(16);
  for (auto variant : {Variant::LlmLogits, Variant::ClEmbedding}) {
    auto net = variant == Variant::LlmLogits ? init_llm_tempnet(llm_cfg(), 17) : init_cl_tempnet(cl_cfg(), 17);
    randomize(net.params, rng);
    const std::size_t n = 9, d0 = net.cfg.d0;
    Tensor x({n, d0});
    for (std::size_t i = 0; i < n; ++i) {
      auto row = variant == Variant::LlmLogits ? testing::normal_vector(rng, d0) : unit_vector(rng, d0);
      std::copy(row.begin(), row.end(), x.row(i).begin());
    }
    ad::Tape tape;
    const auto tau = forward(net.cfg, bind(tape, net.params, false), tape.constant(x));
    for (std::size_t i = 0; i < n; ++i) {
      const double single = variant == Variant::LlmLogits ? forward_llm(net, x.row(i)).first
                                                          : forward_cl(net, x.row(i)).first;
      EXPECT_NEAR(tau.value()[i], single, 1e-13);
    }
  }
}

TEST(Batched, ZeroLogitRowUsesBiasOnly) {
  auto net = init_llm_tempnet(llm_cfg(), 23);
  std::mt19937_64 rng(24);
  randomize(net.params, rng);
  ad::Tape tape;
  const auto tau = forward(net.cfg, bind(tape, net.params, false), tape.constant(Tensor({1, 32})));
  std::vector<double> v(16), u(8);
  for (std::size_t i = 0; i < 16; ++i) v[i] = std::max(net.params.b1[i], 0.0);
  for (std::size_t k = 0; k < 8; ++k)
    for (std::size_t j = 0; j < 16; ++j) u[k] += net.params.W2.at(k, j) * v[j];
  const double s = parameterized_pooling(u, net.params.w3.span(), net.params.phi.item(), net.params.b.item(), 10.0);
  EXPECT_NEAR(tau.value()[0], output_map(s, 0.001, 2.0), 1e-14);
}

// tau summed over a batch, differentiated w.r.t. one parameter tensor.
double param_grad_error(const TempNet& net, const Tensor& x, const std::string& which) {
  auto fn = [&](ad::Tape& tape, ad::Var p) {
    auto vars = bind(tape, net.params, false);
    if (which == "W1") vars.W1 = p;
    if (which == "b1") vars.b1 = p;
    if (which == "W2") vars.W2 = p;
    if (which == "w3") vars.w3 = p;
    if (which == "phi") vars.phi = p;
    if (which == "b") vars.b = p;
    return ad::sum(forward(net.cfg, vars, tape.constant(x)));
  };
  for (const auto& [name, t] : net.params.named())
    if (name == which) return ad::finite_diff_check(fn, *t);
  return 1.0;
}

TEST(Gradients, AllParametersMatchFiniteDifferences) {
  std::mt19937_64 rng(18);
  for (auto variant : {Variant::LlmLogits, Variant::ClEmbedding}) {
    auto net = variant == Variant::LlmLogits ? init_llm_tempnet(llm_cfg(), 19) : init_cl_tempnet(cl_cfg(), 19);
    randomize(net.params, rng);
    const std::size_t n = 5, d0 = net.cfg.d0;
    Tensor x({n, d0});
    for (std::size_t i = 0; i < n; ++i) {
      auto row = variant == Variant::LlmLogits ? testing::normal_vector(rng, d0, 2.0) : unit_vector(rng, d0);
      std::copy(row.begin(), row.end(), x.row(i).begin());
    }
    for (const char* which : {"W1", "b1", "W2", "w3", "phi", "b"})
      EXPECT_LE(param_grad_error(net, x, which), 1e-5) << to_string(variant) << " " << which;
  }
}

TEST(Invariants, RangeHoldsUnderFuzz) {
  std::mt19937_64 rng(20);
  auto llm = init_llm_tempnet(llm_cfg(), 21);
  auto cl = init_cl_tempnet(cl_cfg(), 21);
  randomize(llm.params, rng);
  randomize(cl.params, rng);
  std::uniform_real_distribution<double> log_scale(-8.0, 8.0);
  for (int i = 0; i < 50000; ++i) {
    auto l = testing::normal_vector(rng, 32, std::pow(10.0, log_scale(rng)));
    const double t1 = forward_llm(llm, l).first;
    const double t2 = forward_cl(cl, unit_vector(rng, 12)).first;
    EXPECT_TRUE(t1 >= 0.001 && t1 <= 2.0);
    EXPECT_TRUE(t2 >= 0.001 && t2 <= 2.0);
  }
}

TEST(Invariants, NetworkTemperatureUpperBoundsOptimalLoss) {
  std::mt19937_64 rng(22);
  for (int draw = 0; draw < 100; ++draw) {
    auto cfg = llm_cfg(16, 8, 4);
    cfg.rho = testing::uniform(rng, 0.2, 2.0);
    auto net = init_llm_tempnet(cfg, draw);
    randomize(net.params, rng);
    const dro::DroConfig dcfg{cfg.tau0, cfg.tau_max, cfg.rho};
    double optimal = 0.0, network = 0.0;
    for (int i = 0; i < 20; ++i) {
      const auto l = testing::normal_vector(rng, 16, 2.0);
      dro::LogitSet ls{l[i % 16], l};
      optimal += dro::robust_loss(ls, solver::newton_solve(ls, dcfg).tau, dcfg);
      network += dro::robust_loss(ls, forward_llm(net, l).first, dcfg);
    }
    EXPECT_LE(optimal / 20.0, network / 20.0 + 1e-12);
  }
}

}  // namespace
}  // namespace tempo::net
