#pragma once

// Dense matrix kernels on row-major buffers. Output rows are cut into fixed
// blocks, each multiplied with Eigen. The default versions spread blocks over
// OpenMP threads; `serial` walks the same blocks in order, so results are
// bit-identical regardless of thread count.

#include <cstddef>
#include <span>

namespace tempo::kernels {

/// C (+)= A * B with A m x k, B k x n, C m x n.
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
/// C (+)= A * B^T with A m x k, B n x k.
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
/// C (+)= A^T * B with A k x m, B k x n.
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

namespace serial {
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
}  // namespace serial

/// Number of OpenMP threads kernels will use (1 without OpenMP).
int max_threads();

}  // namespace tempo::kernels
