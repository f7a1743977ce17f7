#include "molingo/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace molingo::kernels {

namespace {

constexpr std::size_t kTileRows = 4;
constexpr std::size_t kTileCols = 16;
// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1u << 16;

// Element accessor for op(A) with strides; op(A)(i, p) = a[i * si + p * sp].
struct Strided {
  const double* base;
  std::size_t si;
  std::size_t sp;
  double operator()(std::size_t i, std::size_t p) const { return base[i * si + p * sp]; }
};

// Every output element is a single fma chain over p = 0..k-1 starting from 0,
// in both the tile path and the edge path, so values never depend on where an
// element falls relative to tile boundaries.
void tile_full(const Strided& a, const double* b, std::size_t ldb, std::size_t k, std::size_t i0,
               std::size_t j0, double* c, std::size_t ldc, bool accumulate) {
  double acc[kTileRows][kTileCols] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * ldb + j0;
#pragma GCC unroll 4
    for (std::size_t r = 0; r < kTileRows; ++r) {
      const double av = a(i0 + r, p);
#pragma omp simd
      for (std::size_t jj = 0; jj < kTileCols; ++jj) acc[r][jj] = std::fma(av, brow[jj], acc[r][jj]);
    }
  }
  for (std::size_t r = 0; r < kTileRows; ++r) {
    double* crow = c + (i0 + r) * ldc + j0;
    for (std::size_t jj = 0; jj < kTileCols; ++jj) crow[jj] = accumulate ? crow[jj] + acc[r][jj] : acc[r][jj];
  }
}

void tile_edge(const Strided& a, const double* b, std::size_t ldb, std::size_t k, std::size_t i0,
               std::size_t i1, std::size_t j0, std::size_t j1, double* c, std::size_t ldc,
               bool accumulate) {
  for (std::size_t i = i0; i < i1; ++i) {
    for (std::size_t j = j0; j < j1; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc = std::fma(a(i, p), b[p * ldb + j], acc);
      double& out = c[i * ldc + j];
      out = accumulate ? out + acc : acc;
    }
  }
}

void row_block(const Strided& a, const double* b, std::size_t ldb, std::size_t n, std::size_t k,
               std::size_t i0, std::size_t i1, double* c, std::size_t ldc, bool accumulate) {
  const std::size_t full_cols = n - n % kTileCols;
  if (i1 - i0 == kTileRows) {
    for (std::size_t j0 = 0; j0 < full_cols; j0 += kTileCols) tile_full(a, b, ldb, k, i0, j0, c, ldc, accumulate);
  } else {
    tile_edge(a, b, ldb, k, i0, i1, 0, full_cols, c, ldc, accumulate);
  }
  if (full_cols < n) tile_edge(a, b, ldb, k, i0, i1, full_cols, n, c, ldc, accumulate);
}

}  // namespace

void set_num_threads(int n) { omp_set_num_threads(std::max(1, n)); }

int num_threads() { return omp_get_max_threads(); }

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc,
          bool accumulate) {
  if (m == 0 || n == 0) return;
  std::vector<double> packed;
  if (trans_b) {
    // op(B) = B^T: pack into a contiguous k x n block.
    packed.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) packed[p * n + j] = b[j * ldb + p];
    b = packed.data();
    ldb = n;
  }
  const Strided av = trans_a ? Strided{a, 1, lda} : Strided{a, lda, 1};
  const std::size_t blocks = (m + kTileRows - 1) / kTileRows;
  const bool par = m * n * k >= kParallelWork && blocks > 1;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = blk * kTileRows;
    const std::size_t i1 = std::min(m, i0 + kTileRows);
    row_block(av, b, ldb, n, k, i0, i1, c, ldc, accumulate);
  }
}

namespace {

void softmax_row(const double* x, double* y, std::size_t cols, const std::uint8_t* mask) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < cols; ++j)
    if (!mask || mask[j]) mx = std::max(mx, x[j]);
  if (!std::isfinite(mx)) {
    std::fill(y, y + cols, 0.0);
    return;
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    const double e = (!mask || mask[j]) ? std::exp(x[j] - mx) : 0.0;
    y[j] = e;
    sum += e;
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
}

void layer_norm_row(const double* x, double* y, double* mean, double* rstd, std::size_t cols,
                    double eps) {
  double mu = 0.0;
  for (std::size_t j = 0; j < cols; ++j) mu += x[j];
  mu /= static_cast<double>(cols);
  double var = 0.0;
  for (std::size_t j = 0; j < cols; ++j) var += (x[j] - mu) * (x[j] - mu);
  var /= static_cast<double>(cols);
  const double rs = 1.0 / std::sqrt(var + eps);
  for (std::size_t j = 0; j < cols; ++j) y[j] = (x[j] - mu) * rs;
  *mean = mu;
  *rstd = rs;
}

}  // namespace

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols,
                  const std::uint8_t* mask, std::size_t rows_per_mask) {
  const bool par = rows * cols >= kParallelWork / 4;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t r = 0; r < rows; ++r) {
    const std::uint8_t* m = mask ? mask + (r / rows_per_mask) * cols : nullptr;
    softmax_row(x + r * cols, y + r * cols, cols, m);
  }
}

void layer_norm_rows(const double* x, double* y, double* mean, double* rstd, std::size_t rows,
                     std::size_t cols, double eps) {
  const bool par = rows * cols >= kParallelWork / 4;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t r = 0; r < rows; ++r)
    layer_norm_row(x + r * cols, y + r * cols, mean + r, rstd + r, cols, eps);
}

namespace reference {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc,
          bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = trans_a ? a[p * lda + i] : a[i * lda + p];
        const double bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
        acc += av * bv;
      }
      c[i * ldc + j] = accumulate ? c[i * ldc + j] + acc : acc;
    }
  }
}

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols,
                  const std::uint8_t* mask, std::size_t rows_per_mask) {
  for (std::size_t r = 0; r < rows; ++r)
    softmax_row(x + r * cols, y + r * cols, cols, mask ? mask + (r / rows_per_mask) * cols : nullptr);
}

void layer_norm_rows(const double* x, double* y, double* mean, double* rstd, std::size_t rows,
                     std::size_t cols, double eps) {
  for (std::size_t r = 0; r < rows; ++r)
    layer_norm_row(x + r * cols, y + r * cols, mean + r, rstd + r, cols, eps);
}

}  // namespace reference
}  // namespace molingo::kernels
