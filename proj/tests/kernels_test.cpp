#include <gtest/gtest.h>

#include <omp.h>

#include <cmath>
#include <random>
#include <tuple>
#include <vector>

#include "tempo/kernels.hpp"
#include "test_util.hpp"

namespace tempo::kernels {
namespace {

using Shape = std::tuple<std::size_t, std::size_t, std::size_t>;

const Shape kShapes[] = {{1, 1, 1}, {3, 5, 2}, {64, 7, 9}, {65, 33, 17}, {200, 48, 130}, {257, 96, 64}};

// Element (i, j) of A with the given storage, via op = N (row-major m x k) or T (k x m).
double at(const std::vector<double>& x, bool transposed, std::size_t rows, std::size_t cols, std::size_t i,
          std::size_t j) {
  return transposed ? x[j * rows + i] : x[i * cols + j];
}

std::vector<double> naive(const std::vector<double>& a, bool ta, const std::vector<double>& b, bool tb,
                          std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double acc = 0.0L;
      for (std::size_t p = 0; p < k; ++p) acc += static_cast<long double>(at(a, ta, m, k, i, p)) * at(b, tb, k, n, p, j);
      c[i * n + j] = static_cast<double>(acc);
    }
  return c;
}

using Kernel = void (*)(std::span<const double>, std::span<const double>, std::span<double>, std::size_t,
                        std::size_t, std::size_t, bool);

struct Variant {
  const char* name;
  Kernel parallel;
  Kernel reference;
  bool ta, tb;
};

const Variant kVariants[] = {{"nn", matmul, serial::matmul, false, false},
                             {"nt", matmul_nt, serial::matmul_nt, false, true},
                             {"tn", matmul_tn, serial::matmul_tn, true, false}};

class ThreadsGuard {
 public:
  explicit ThreadsGuard(int n) : saved_(omp_get_max_threads()) { omp_set_num_threads(n); }
  ~ThreadsGuard() { omp_set_num_threads(saved_); }

 private:
  int saved_;
};

TEST(Kernels, ParallelEqualsSerialBitwise) {
  std::mt19937_64 rng(1);
  for (int threads : {1, 3, 4}) {
    ThreadsGuard guard(threads);
    for (const auto& v : kVariants)
      for (const auto& [m, k, n] : kShapes)
        for (bool acc : {false, true}) {
          const auto a = testing::normal_vector(rng, m * k);
          const auto b = testing::normal_vector(rng, k * n);
          const auto init = testing::normal_vector(rng, m * n);
          auto cp = init, cs = init;
          v.parallel(a, b, cp, m, k, n, acc);
          v.reference(a, b, cs, m, k, n, acc);
          EXPECT_EQ(cp, cs) << v.name << " " << m << "x" << k << "x" << n << " threads " << threads;
        }
  }
}

TEST(Kernels, MatchNaiveProduct) {
  std::mt19937_64 rng(2);
  for (const auto& v : kVariants)
    for (const auto& [m, k, n] : kShapes) {
      const auto a = testing::normal_vector(rng, m * k);
      const auto b = testing::normal_vector(rng, k * n);
      const auto expect = naive(a, v.ta, b, v.tb, m, k, n);
      std::vector<double> c(m * n, 0.5);
      v.parallel(a, b, c, m, k, n, false);
      for (std::size_t i = 0; i < c.size(); ++i)
        EXPECT_NEAR(c[i], expect[i], 1e-12 * (1.0 + std::sqrt(static_cast<double>(k)))) << v.name;
      std::vector<double> acc(m * n, 0.5);
      v.parallel(a, b, acc, m, k, n, true);
      for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(acc[i], expect[i] + 0.5, 1e-11) << v.name;
    }
}

TEST(Kernels, MaxThreadsPositive) { EXPECT_GE(max_threads(), 1); }

}  // namespace
}  // namespace tempo::kernels
