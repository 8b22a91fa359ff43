#include "tempo/kernels.hpp"

// Threading is done here over row blocks, never inside Eigen.
#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tempo::kernels {
namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<Matrix>;
using ConstMap = Eigen::Map<const Matrix>;
using Stride = Eigen::OuterStride<>;
using ConstStridedMap = Eigen::Map<const Matrix, 0, Stride>;

// Output rows are processed in fixed blocks; a block's result does not depend
// on which thread computes it.
constexpr std::size_t kBlockRows = 64;
// Below this many multiply-adds thread start-up dominates.
constexpr std::size_t kParallelWork = std::size_t{1} << 16;

std::ptrdiff_t block_count(std::size_t m) { return static_cast<std::ptrdiff_t>((m + kBlockRows - 1) / kBlockRows); }

template <typename Lhs, typename Rhs>
void store(Map out, const Lhs& lhs, const Rhs& rhs, bool accumulate) {
  if (accumulate) {
    out.noalias() += lhs * rhs;
  } else {
    out.noalias() = lhs * rhs;
  }
}

// C[r0:r0+rows] (+)= A[r0:r0+rows] * B
void block_nn(const double* a, const double* b, double* c, std::size_t r0, std::size_t rows, std::size_t k,
              std::size_t n, bool accumulate) {
  store(Map(c + r0 * n, rows, n), ConstMap(a + r0 * k, rows, k), ConstMap(b, k, n), accumulate);
}

// C[r0:r0+rows] (+)= A[r0:r0+rows] * B^T
void block_nt(const double* a, const double* b, double* c, std::size_t r0, std::size_t rows, std::size_t k,
              std::size_t n, bool accumulate) {
  store(Map(c + r0 * n, rows, n), ConstMap(a + r0 * k, rows, k), ConstMap(b, n, k).transpose(), accumulate);
}

// C[r0:r0+rows] (+)= (A[:, r0:r0+rows])^T * B with A k x m
void block_tn(const double* a, const double* b, double* c, std::size_t r0, std::size_t rows, std::size_t m,
              std::size_t k, std::size_t n, bool accumulate) {
  const ConstStridedMap cols(a + r0, k, rows, Stride(m));
  store(Map(c + r0 * n, rows, n), cols.transpose(), ConstMap(b, k, n), accumulate);
}

std::size_t rows_in(std::ptrdiff_t blk, std::size_t m) {
  const std::size_t r0 = static_cast<std::size_t>(blk) * kBlockRows;
  return std::min(kBlockRows, m - r0);
}

}  // namespace

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const auto blocks = block_count(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (std::ptrdiff_t blk = 0; blk < blocks; ++blk)
    block_nn(a.data(), b.data(), c.data(), blk * kBlockRows, rows_in(blk, m), k, n, accumulate);
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const auto blocks = block_count(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (std::ptrdiff_t blk = 0; blk < blocks; ++blk)
    block_nt(a.data(), b.data(), c.data(), blk * kBlockRows, rows_in(blk, m), k, n, accumulate);
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const auto blocks = block_count(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (std::ptrdiff_t blk = 0; blk < blocks; ++blk)
    block_tn(a.data(), b.data(), c.data(), blk * kBlockRows, rows_in(blk, m), m, k, n, accumulate);
}

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::ptrdiff_t blk = 0; blk < block_count(m); ++blk)
    block_nn(a.data(), b.data(), c.data(), blk * kBlockRows, rows_in(blk, m), k, n, accumulate);
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::ptrdiff_t blk = 0; blk < block_count(m); ++blk)
    block_nt(a.data(), b.data(), c.data(), blk * kBlockRows, rows_in(blk, m), k, n, accumulate);
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::ptrdiff_t blk = 0; blk < block_count(m); ++blk)
    block_tn(a.data(), b.data(), c.data(), blk * kBlockRows, rows_in(blk, m), m, k, n, accumulate);
}

}  // namespace serial

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace tempo::kernels
