#include <vector>

#include "doctest.h"
#include "molingo/kernels.hpp"
#include "molingo/rng.hpp"

using namespace molingo;

namespace {

std::vector<double> randn(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("gemm matches the serial reference for all transpose combinations") {
  Rng rng(1);
  const std::size_t shapes[][3] = {{1, 1, 1}, {3, 5, 7}, {4, 16, 9}, {17, 33, 20}, {64, 48, 31}, {5, 130, 3}};
  for (const auto& s : shapes) {
    const std::size_t m = s[0], n = s[1], k = s[2];
    for (int ta = 0; ta < 2; ++ta)
      for (int tb = 0; tb < 2; ++tb)
        for (int acc = 0; acc < 2; ++acc) {
          auto a = randn(m * k, rng), b = randn(k * n, rng), c0 = randn(m * n, rng);
          const std::size_t lda = ta ? m : k, ldb = tb ? k : n;
          auto c1 = c0, c2 = c0;
          kernels::gemm(ta, tb, m, n, k, a.data(), lda, b.data(), ldb, c1.data(), n, acc);
          kernels::reference::gemm(ta, tb, m, n, k, a.data(), lda, b.data(), ldb, c2.data(), n, acc);
          for (std::size_t i = 0; i < m * n; ++i) CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-12));
        }
  }
}

TEST_CASE("gemm rows do not depend on how many rows are computed together") {
  Rng rng(2);
  const std::size_t m = 37, n = 29, k = 41;
  auto a = randn(m * k, rng), b = randn(k * n, rng);
  std::vector<double> full(m * n);
  kernels::gemm(false, false, m, n, k, a.data(), k, b.data(), n, full.data(), n, false);
  for (std::size_t r = 0; r < m; ++r) {
    std::vector<double> row(n);
    kernels::gemm(false, false, 1, n, k, a.data() + r * k, k, b.data(), n, row.data(), n, false);
    for (std::size_t c = 0; c < n; ++c) CHECK(row[c] == full[r * n + c]);
  }
}

TEST_CASE("gemm is bitwise identical across thread counts") {
  Rng rng(3);
  const std::size_t m = 200, n = 96, k = 80;
  auto a = randn(m * k, rng), b = randn(k * n, rng);
  std::vector<double> c1(m * n), c4(m * n);
  const int before = kernels::num_threads();
  kernels::set_num_threads(1);
  kernels::gemm(false, true, m, n, k, a.data(), k, b.data(), k, c1.data(), n, false);
  kernels::set_num_threads(4);
  kernels::gemm(false, true, m, n, k, a.data(), k, b.data(), k, c4.data(), n, false);
  kernels::set_num_threads(before);
  CHECK(c1 == c4);
}

TEST_CASE("softmax and layer norm match the reference") {
  Rng rng(4);
  const std::size_t rows = 12, cols = 19;
  auto x = randn(rows * cols, rng);
  std::vector<std::uint8_t> mask(3 * cols, 1);
  mask[2] = 0;
  mask[cols + 5] = 0;
  for (std::size_t c = 0; c < cols; ++c) mask[2 * cols + c] = 0;
  std::vector<double> y1(rows * cols), y2(rows * cols);
  kernels::softmax_rows(x.data(), y1.data(), rows, cols, mask.data(), 4);
  kernels::reference::softmax_rows(x.data(), y2.data(), rows, cols, mask.data(), 4);
  for (std::size_t i = 0; i < rows * cols; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-13));
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += y1[r * cols + c];
    CHECK(s == doctest::Approx(r >= 8 ? 0.0 : 1.0));
  }
  CHECK(y1[2] == 0.0);

  std::vector<double> m1(rows), r1(rows), m2(rows), r2(rows);
  kernels::layer_norm_rows(x.data(), y1.data(), m1.data(), r1.data(), rows, cols, 1e-6);
  kernels::reference::layer_norm_rows(x.data(), y2.data(), m2.data(), r2.data(), rows, cols, 1e-6);
  for (std::size_t i = 0; i < rows * cols; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-12));
}
