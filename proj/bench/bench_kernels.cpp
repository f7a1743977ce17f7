// Serial reference kernels against the OpenMP kernels.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "molingo/kernels.hpp"
#include "molingo/rng.hpp"

namespace k = molingo::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  molingo::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::gemm(false, false, n, n, n, a.data(), n, b.data(), n, c.data(), n, false);
    } else {
      k::reference::gemm(false, false, n, n, n, a.data(), n, b.data(), n, c.data(), n, false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * static_cast<double>(n * n * n) *
                                                     static_cast<double>(state.iterations()),
                                                 benchmark::Counter::kIsRate, benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_Softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), cols = std::size_t{128};
  const auto x = random_vector(rows * cols, 3);
  std::vector<double> y(rows * cols);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::softmax_rows(x.data(), y.data(), rows, cols, nullptr, 1);
    } else {
      k::reference::softmax_rows(x.data(), y.data(), rows, cols, nullptr, 1);
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows * cols));
}

template <bool Parallel>
void BM_LayerNorm(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), cols = std::size_t{256};
  const auto x = random_vector(rows * cols, 4);
  std::vector<double> y(rows * cols), mean(rows), rstd(rows);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::layer_norm_rows(x.data(), y.data(), mean.data(), rstd.data(), rows, cols, 1e-5);
    } else {
      k::reference::layer_norm_rows(x.data(), y.data(), mean.data(), rstd.data(), rows, cols, 1e-5);
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows * cols));
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_Softmax<false>)->Name("softmax/serial")->Arg(256)->Arg(4096);
BENCHMARK(BM_Softmax<true>)->Name("softmax/parallel")->Arg(256)->Arg(4096);
BENCHMARK(BM_LayerNorm<false>)->Name("layer_norm/serial")->Arg(256)->Arg(4096);
BENCHMARK(BM_LayerNorm<true>)->Name("layer_norm/parallel")->Arg(256)->Arg(4096);

BENCHMARK_MAIN();
