#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "tempo/kernels.hpp"
#include "tempo/solver.hpp"

namespace {

std::vector<double> normals(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

template <auto Kernel>
void BM_Matmul(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const std::size_t k = 128, n = 128;
  const auto a = normals(m * k, 1);
  const auto b = normals(k * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    Kernel(a, b, c, m, k, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * m * k * n));
}

void matmul_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                     std::size_t k, std::size_t n, bool acc) {
  tempo::kernels::matmul(a, b, c, m, k, n, acc);
}
void matmul_serial(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                   std::size_t k, std::size_t n, bool acc) {
  tempo::kernels::serial::matmul(a, b, c, m, k, n, acc);
}

BENCHMARK(BM_Matmul<matmul_parallel>)->Name("matmul/parallel")->Arg(256)->Arg(1024)->Arg(4096)->UseRealTime();
BENCHMARK(BM_Matmul<matmul_serial>)->Name("matmul/serial")->Arg(256)->Arg(1024)->Arg(4096)->UseRealTime();

std::vector<tempo::dro::LogitSet> instances(std::size_t count, std::size_t k) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> dist(0.0, 2.0);
  std::vector<tempo::dro::LogitSet> out(count);
  for (auto& ls : out) {
    ls.positive = dist(rng);
    ls.contrast.resize(k);
    for (double& h : ls.contrast) h = dist(rng);
  }
  return out;
}

template <bool Parallel>
void BM_BatchSolve(benchmark::State& state) {
  const auto data = instances(static_cast<std::size_t>(state.range(0)), 256);
  const tempo::dro::DroConfig cfg{0.001, 2.0, 1.0};
  for (auto _ : state) {
    auto sols = Parallel ? tempo::solver::batch_solve(data, cfg) : tempo::solver::batch_solve_serial(data, cfg);
    benchmark::DoNotOptimize(sols.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

BENCHMARK(BM_BatchSolve<true>)->Name("batch_solve/parallel")->Arg(1000)->Arg(10000)->UseRealTime();
BENCHMARK(BM_BatchSolve<false>)->Name("batch_solve/serial")->Arg(1000)->Arg(10000)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
