#include "tempo/autodiff.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "tempo/dro.hpp"
#include "tempo/error.hpp"
#include "test_util.hpp"

namespace tempo::ad {
namespace {

Tensor random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  return Tensor::matrix(r, c, testing::normal_vector(rng, r * c, scale));
}

// Weighted sum so that every output coordinate carries a distinct gradient.
Var probe(Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor w(y.value().shape());
  for (double& v : w.values()) v = testing::uniform(rng, -1.0, 1.0);
  return sum(mul(y, y.tape().constant(std::move(w))));
}

TEST(Primitives, Relu) {
  Tape t;
  auto y = relu(t.constant(Tensor::vector({-1.0, 0.0, 2.0})));
  EXPECT_EQ(y.value().values(), (std::vector<double>{0.0, 0.0, 2.0}));
}

TEST(Primitives, L2Normalize) {
  Tape t;
  auto y = l2_normalize(t.constant(Tensor::vector({3.0, 4.0})), 1);
  EXPECT_NEAR(y.value()[0], 0.6, 1e-15);
  EXPECT_NEAR(y.value()[1], 0.8, 1e-15);
}

TEST(Primitives, SoftmaxBackwardMatchesFiniteDifference) {
  std::mt19937_64 rng(1);
  const auto x = Tensor::vector(testing::normal_vector(rng, 8));
  const double err = finite_diff_check([](Tape&, Var v) { return probe(softmax_rows(v), 2); }, x);
  EXPECT_LE(err, 1e-6);
}

TEST(Primitives, ShapeMismatchNamesBothShapes) {
  Tape t;
  auto a = t.constant(Tensor({2, 3}));
  auto b = t.constant(Tensor({3, 2}));
  try {
    add(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[3x2]"), std::string::npos);
  }
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Backward, SumGivesOnes) {
  Tape t;
  auto x = t.leaf(Tensor::vector({1, 2, 3, 4, 5}));
  t.backward(sum(x));
  EXPECT_EQ(t.grad(x).values(), std::vector<double>(5, 1.0));
}

TEST(Backward, LogsumexpGradientIsSoftmax) {
  std::mt19937_64 rng(3);
  Tape t;
  auto x = t.leaf(Tensor::vector(testing::normal_vector(rng, 10)));
  t.backward(sum(logsumexp_rows(x)));
  const auto p = softmax_rows(t.constant(x.value())).value();
  const auto g = t.grad(x);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(g[i], p[i], 1e-15);
}

TEST(Backward, NonScalarRootIsDomainError) {
  Tape t;
  auto x = t.leaf(Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(t.backward(x), DomainError);
}

TEST(Backward, UntouchedLeafGetsZeroGradient) {
  Tape t;
  auto x = t.leaf(Tensor::vector({1.0, 2.0}));
  auto unused = t.leaf(Tensor::vector({3.0, 4.0, 5.0}));
  t.backward(sum(x));
  EXPECT_EQ(t.grad(unused).values(), std::vector<double>(3, 0.0));
}

TEST(Backward, DeterministicAcrossRuns) {
  std::mt19937_64 rng(5);
  const auto a = random_matrix(rng, 16, 12), b = random_matrix(rng, 12, 9);
  auto run = [&] {
    Tape t;
    auto va = t.leaf(a), vb = t.leaf(b);
    t.backward(sum(logsumexp_rows(relu(matmul(va, vb)))));
    return std::pair{t.grad(va), t.grad(vb)};
  };
  const auto first = run();
  const auto second = run();
  EXPECT_EQ(first.first, second.first);
  EXPECT_EQ(first.second, second.second);
}

TEST(StopGradient, OneBranchDetached) {
  Tape t;
  auto x = t.leaf(Tensor::vector({1.5, -2.0, 3.0}));
  t.backward(sum(mul(stop_gradient(x), x)));
  EXPECT_EQ(t.grad(x).values(), x.value().values());
}

TEST(StopGradient, FullyDetachedLossGivesZeroGradient) {
  Tape t;
  auto x = t.leaf(Tensor::vector({1.5, -2.0, 3.0}));
  auto y = stop_gradient(x);
  EXPECT_EQ(y.value(), x.value());
  t.backward(sum(mul(y, y)));
  EXPECT_EQ(t.grad(x).values(), std::vector<double>(3, 0.0));
}

TEST(FiniteDiff, HalfSquaredNorm) {
  std::mt19937_64 rng(7);
  const auto x = Tensor::vector(testing::normal_vector(rng, 20));
  const double err = finite_diff_check([](Tape&, Var v) { return scale(sum(mul(v, v)), 0.5); }, x);
  EXPECT_LE(err, 1e-9);
}

TEST(FiniteDiff, RejectsVectorFunctions) {
  EXPECT_THROW(finite_diff_check([](Tape&, Var v) { return v; }, Tensor::vector({1.0, 2.0})),
               DomainError);
}

TEST(RobustRows, MatchesClosedFormAndGradients) {
  std::mt19937_64 rng(9);
  const std::size_t n = 6, k = 7;
  const auto contrast = random_matrix(rng, n, k);
  const auto positive = Tensor::vector(testing::normal_vector(rng, n));
  Tensor tau({n});
  for (double& v : tau.values()) v = testing::uniform(rng, 0.05, 2.0);
  const double rho = 0.8;
  {
    Tape t;
    auto f = robust_rows(t.constant(contrast), t.constant(positive), t.constant(tau), rho);
    for (std::size_t i = 0; i < n; ++i) {
      dro::LogitSet ls{positive[i], {contrast.row(i).begin(), contrast.row(i).end()}};
      EXPECT_NEAR(f.value()[i], dro::robust_loss(ls, tau[i], dro::DroConfig{1e-3, 2.0, rho}), 1e-13);
    }
  }
  auto wrt_contrast = [&](Tape& t, Var c) {
    return sum(robust_rows(c, t.constant(positive), t.constant(tau), rho));
  };
  auto wrt_positive = [&](Tape& t, Var p) {
    return sum(robust_rows(t.constant(contrast), p, t.constant(tau), rho));
  };
  auto wrt_tau = [&](Tape& t, Var s) {
    return sum(robust_rows(t.constant(contrast), t.constant(positive), s, rho));
  };
  EXPECT_LE(finite_diff_check(wrt_contrast, contrast), 1e-5);
  EXPECT_LE(finite_diff_check(wrt_positive, positive), 1e-5);
  EXPECT_LE(finite_diff_check(wrt_tau, tau), 1e-5);
}

// Every primitive against central differences on random shapes.
class PrimitiveGradient : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradient, MatchesFiniteDifference) {
  std::mt19937_64 rng(100 + GetParam());
  const std::size_t r = 2 + rng() % 6, c = 2 + rng() % 6;
  const auto x = random_matrix(rng, r, c);
  const auto other = random_matrix(rng, r, c);
  const auto right = random_matrix(rng, c, 3);
  const auto vec = Tensor::vector(testing::normal_vector(rng, c));
  const auto square = random_matrix(rng, r, r);
  std::vector<std::size_t> idx(r);
  for (auto& i : idx) i = rng() % c;
  const std::size_t seed = rng();

  const std::vector<std::pair<const char*, ScalarFn>> cases = {
      {"add", [&](Tape& t, Var v) { return probe(add(v, t.constant(other)), seed); }},
      {"sub", [&](Tape& t, Var v) { return probe(sub(t.constant(other), v), seed); }},
      {"mul", [&](Tape& t, Var v) { return probe(mul(v, t.constant(other)), seed); }},
      {"scale", [&](Tape&, Var v) { return probe(scale(v, -1.7), seed); }},
      {"mul_scalar", [&](Tape& t, Var v) { return probe(mul_scalar(v, t.leaf(Tensor::scalar(0.3))), seed); }},
      {"div_scalar", [&](Tape& t, Var v) { return probe(div_scalar(v, t.leaf(Tensor::scalar(1.3))), seed); }},
      {"add_scalar", [&](Tape& t, Var v) { return probe(add_scalar(v, t.leaf(Tensor::scalar(0.2))), seed); }},
      {"matmul", [&](Tape& t, Var v) { return probe(matmul(v, t.constant(right)), seed); }},
      {"matmul_nt", [&](Tape& t, Var v) { return probe(matmul_nt(t.constant(other), v), seed); }},
      {"transpose", [&](Tape&, Var v) { return probe(transpose(v), seed); }},
      {"add_row", [&](Tape& t, Var v) { return probe(add_row(v, t.constant(vec)), seed); }},
      {"scale_cols", [&](Tape& t, Var v) { return probe(scale_cols(v, t.constant(vec)), seed); }},
      {"relu", [&](Tape&, Var v) { return probe(relu(v), seed); }},
      {"logistic", [&](Tape&, Var v) { return probe(logistic(v), seed); }},
      {"softmax_rows", [&](Tape&, Var v) { return probe(softmax_rows(v), seed); }},
      {"logsumexp_rows", [&](Tape&, Var v) { return probe(logsumexp_rows(v), seed); }},
      {"l2_normalize_rows", [&](Tape&, Var v) { return probe(l2_normalize(v, 1), seed); }},
      {"l2_normalize_cols", [&](Tape&, Var v) { return probe(l2_normalize(v, 0), seed); }},
      {"mean", [&](Tape&, Var v) { return scale(mean(v), 3.0); }},
      {"sum_rows", [&](Tape&, Var v) { return probe(sum_rows(v), seed); }},
      {"gather_cols", [&](Tape&, Var v) { return probe(gather_cols(v, idx), seed); }},
      {"slice_rows", [&](Tape&, Var v) { return probe(slice_rows(v, 1, r - 1), seed); }},
      {"concat_rows", [&](Tape& t, Var v) {
         const Var parts[] = {v, t.constant(other), v};
         return probe(concat_rows(parts), seed);
       }},
  };
  for (const auto& [name, fn] : cases) {
    EXPECT_LE(finite_diff_check(fn, x), 1e-5) << name;
  }

  const std::vector<std::pair<const char*, ScalarFn>> square_cases = {
      {"causal_softmax_rows", [&](Tape&, Var v) { return probe(causal_softmax_rows(v), seed); }},
      {"diag", [&](Tape&, Var v) { return probe(diag(v), seed); }},
      {"offdiag", [&](Tape&, Var v) { return probe(offdiag(v), seed); }},
  };
  for (const auto& [name, fn] : square_cases) {
    EXPECT_LE(finite_diff_check(fn, square), 1e-5) << name;
  }

  std::vector<std::size_t> ids(5);
  for (auto& i : ids) i = rng() % r;
  EXPECT_LE(finite_diff_check([&](Tape&, Var v) { return probe(embedding_lookup(v, ids), seed); }, x), 1e-5)
      << "embedding_lookup";
}

INSTANTIATE_TEST_SUITE_P(Fuzz, PrimitiveGradient, ::testing::Range(0, 12));

TEST(PrimitiveGradient, LongVectors) {
  std::mt19937_64 rng(77);
  const auto x = Tensor::vector(testing::normal_vector(rng, 4096));
  FiniteDiffOptions opts;
  opts.max_coords = 256;
  EXPECT_LE(finite_diff_check([](Tape&, Var v) { return probe(softmax_rows(v), 1); }, x, opts), 1e-5);
  EXPECT_LE(finite_diff_check([](Tape&, Var v) { return probe(l2_normalize(v, 1), 2); }, x, opts), 1e-5);
  EXPECT_LE(finite_diff_check([](Tape&, Var v) { return sum(logsumexp_rows(v)); }, x, opts), 1e-5);
}

TEST(CausalSoftmax, IgnoresFutureColumns) {
  Tape t;
  auto y = causal_softmax_rows(t.constant(Tensor::matrix(3, 3, {1, 50, 50, 2, 3, 50, 1, 1, 1})));
  EXPECT_DOUBLE_EQ(y.value().at(0, 0), 1.0);
  EXPECT_EQ(y.value().at(0, 1), 0.0);
  EXPECT_EQ(y.value().at(1, 2), 0.0);
  EXPECT_NEAR(y.value().at(2, 0), 1.0 / 3.0, 1e-15);
}

}  // namespace
}  // namespace tempo::ad
