#pragma once

#include <cstddef>
#include <cstdint>

// Dense compute kernels. Every kernel exists twice: the OpenMP-parallel,
// register-tiled version used by the library, and a plain serial version in
// `reference` that the tests and the benchmark compare against.
//
// The parallel kernels split work by output rows only, so each output element
// is computed by one thread with a fixed reduction order: results are bitwise
// identical for any thread count.
namespace molingo::kernels {

void set_num_threads(int n);
int num_threads();

// C = op(A) * op(B)  (or C += ... when accumulate). op(X) = X or X^T.
// op(A) is m x k, op(B) is k x n, C is m x n; all row-major with leading dims.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
          std::size_t ldc, bool accumulate);

// Row softmax over `cols`. When `mask` is non-null, row r reads its key mask
// from mask + (r / rows_per_mask) * cols; masked entries get probability 0.
// A fully masked row yields all zeros.
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols,
                  const std::uint8_t* mask, std::size_t rows_per_mask);

// Normalizes each row to zero mean / unit variance (no affine).
// mean and rstd receive one value per row.
void layer_norm_rows(const double* x, double* y, double* mean, double* rstd, std::size_t rows,
                     std::size_t cols, double eps);

namespace reference {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
          std::size_t ldc, bool accumulate);
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols,
                  const std::uint8_t* mask, std::size_t rows_per_mask);
void layer_norm_rows(const double* x, double* y, double* mean, double* rstd, std::size_t rows,
                     std::size_t cols, double eps);

}  // namespace reference
}  // namespace molingo::kernels
