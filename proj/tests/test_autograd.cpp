#include "doctest.h"
#include "molingo/autograd.hpp"
#include "molingo/kinematics.hpp"
#include "support.hpp"

using namespace molingo;
using molingo::testing::directional_grad_check;
using molingo::testing::random_tensor;

namespace {

constexpr double kTol = 1e-6;

// Reduces any output to a scalar through a fixed random weighting.
ag::Var weighted_sum(const ag::Var& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return ag::sum(ag::mul(y, ag::constant(random_tensor(y.shape(), rng))));
}

double check(const std::function<ag::Var(const std::vector<ag::Var>&)>& f, const std::vector<Tensor>& in) {
  Rng rng(5);
  return directional_grad_check(f, in, 12, rng).max_rel_error;
}

}  // namespace

TEST_CASE("elementwise op gradients") {
  Rng rng(10);
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), s = random_tensor({1}, rng);
  using V = std::vector<ag::Var>;
  CHECK(check([](const V& v) { return weighted_sum(ag::add(v[0], v[1])); }, {a, b}) < kTol);
  CHECK(check([](const V& v) { return weighted_sum(ag::sub(v[0], v[1])); }, {a, b}) < kTol);
  CHECK(check([](const V& v) { return weighted_sum(ag::mul(v[0], v[1])); }, {a, b}) < kTol);
  CHECK(check([](const V& v) { return weighted_sum(ag::scale(ag::add_scalar(v[0], 0.3), -1.7)); }, {a}) < kTol);
  CHECK(check([](const V& v) { return weighted_sum(ag::mul_scalar_var(v[0], v[1])); }, {a, s}) < kTol);
  CHECK(check([](const V& v) { return weighted_sum(ag::silu(v[0])); }, {a}) < kTol);
  CHECK(check([](const V& v) { return weighted_sum(ag::gelu(v[0])); }, {a}) < kTol);
  CHECK(check([](const V& v) { return weighted_sum(ag::exp(v[0])); }, {a}) < kTol);
  CHECK(check([](const V& v) { return weighted_sum(ag::square(v[0])); }, {a}) < kTol);
  CHECK(check([](const V& v) { return ag::mean(v[0]); }, {a}) < kTol);
  CHECK(check([](const V& v) { return ag::mse(v[0], v[1]); }, {a, b}) < kTol);
}

TEST_CASE("broadcast and matrix op gradients") {
  Rng rng(11);
  using V = std::vector<ag::Var>;
  const Tensor x = random_tensor({2, 3, 4}, rng), row = random_tensor({4}, rng), w = random_tensor({4, 5}, rng);
  CHECK(check([](const V& v) { return weighted_sum(ag::add_row(v[0], v[1])); }, {x, row}) < kTol);
  CHECK(check([](const V& v) { return weighted_sum(ag::mul_row(v[0], v[1])); }, {x, row}) < kTol);
  CHECK(check([](const V& v) { return weighted_sum(ag::matmul(v[0], v[1])); }, {x, w}) < kTol);
  const Tensor a = random_tensor({6, 4}, rng), b = random_tensor({5, 4}, rng);
  CHECK(check([](const V& v) { return weighted_sum(ag::matmul_nt(v[0], v[1])); }, {a, b}) < kTol);
  const Tensor ga = random_tensor({2, 3, 4}, rng), gb = random_tensor({2, 4, 5}, rng), gt = random_tensor({2, 5, 4}, rng);
  CHECK(check([](const V& v) { return weighted_sum(ag::bmm(v[0], v[1], false)); }, {ga, gb}) < kTol);
  CHECK(check([](const V& v) { return weighted_sum(ag::bmm(v[0], v[1], true)); }, {ga, gt}) < kTol);
}

TEST_CASE("attention building block gradients") {
  Rng rng(12);
  using V = std::vector<ag::Var>;
  const Tensor logits = random_tensor({4, 3, 5}, rng);
  std::vector<std::uint8_t> mask{1, 1, 0, 1, 0, 1, 1, 1, 1, 1};
  CHECK(check([&](const V& v) { return weighted_sum(ag::masked_softmax(v[0], &mask, 2)); }, {logits}) < kTol);
  CHECK(check([](const V& v) { return weighted_sum(ag::masked_softmax(v[0], nullptr, 1)); }, {logits}) < kTol);
  const Tensor x = random_tensor({2, 3, 6}, rng);
  CHECK(check([](const V& v) { return weighted_sum(ag::layer_norm(v[0])); }, {x}) < kTol);
  CHECK(check([](const V& v) { return weighted_sum(ag::split_heads(v[0], 3)); }, {x}) < kTol);
  CHECK(check([](const V& v) { return weighted_sum(ag::merge_heads(ag::split_heads(v[0], 2), 2)); }, {x}) < kTol);
  ag::Var round = ag::merge_heads(ag::split_heads(ag::Var(x), 3), 3);
  CHECK(round.value() == x);
}

TEST_CASE("shape op gradients") {
  Rng rng(13);
  using V = std::vector<ag::Var>;
  const Tensor x = random_tensor({3, 7}, rng), y = random_tensor({3, 2}, rng);
  CHECK(check([](const V& v) { return weighted_sum(ag::slice_cols(v[0], 2, 3)); }, {x}) < kTol);
  CHECK(check([](const V& v) { return weighted_sum(ag::concat_cols({v[0], v[1]})); }, {x, y}) < kTol);
  CHECK(check([](const V& v) { return weighted_sum(ag::gather_rows(v[0], {2, 0, 2})); }, {x}) < kTol);
  CHECK(check([](const V& v) { return weighted_sum(ag::reshape(v[0], {7, 3})); }, {x}) < kTol);
  CHECK(check([](const V& v) { return weighted_sum(ag::row_cosine(v[0], v[1])); },
              {random_tensor({4, 5}, rng), random_tensor({4, 5}, rng)}) < kTol);
  CHECK(check([](const V& v) { return weighted_sum(ag::l2_normalize_rows(v[0])); }, {x}) < kTol);
  CHECK(check([](const V& v) { return ag::cross_entropy_rows(v[0], {1, 6, 0}); }, {x}) < kTol);
}

TEST_CASE("temporal op gradients") {
  Rng rng(14);
  using V = std::vector<ag::Var>;
  const Tensor x = random_tensor({2, 9, 3}, rng);
  const Tensor w = random_tensor({3 * 3, 4}, rng), bias = random_tensor({4}, rng);
  for (bool replicate : {false, true})
    for (std::size_t stride : {1u, 2u})
      for (std::size_t dil : {1u, 3u}) {
        ag::ConvSpec spec{3, stride, dil, 2 * dil - (stride - 1), replicate};
        CHECK(check([&](const V& v) { return weighted_sum(ag::conv1d(v[0], v[1], v[2], spec)); }, {x, w, bias}) <
              kTol);
      }
  CHECK(check([](const V& v) { return weighted_sum(ag::upsample2(v[0])); }, {x}) < kTol);
  CHECK(check([](const V& v) { return weighted_sum(ag::temporal_diff(v[0])); }, {x}) < kTol);
  CHECK(check([](const V& v) { return weighted_sum(ag::mean_pool_time(v[0], {9, 4})); }, {x}) < kTol);
}

TEST_CASE("conv1d with zero padding matches a direct sum") {
  Rng rng(15);
  const std::size_t t = 10, cin = 2, cout = 3, k = 4;
  const Tensor x = random_tensor({1, t, cin}, rng), w = random_tensor({k * cin, cout}, rng);
  ag::ConvSpec spec{k, 2, 1, 2, false};
  const ag::Var y = ag::conv1d(ag::Var(x), ag::Var(w), ag::Var(), spec);
  REQUIRE(y.shape() == Shape{1, ag::conv_output_length(t, spec), cout});
  for (std::size_t o = 0; o < y.shape()[1]; ++o)
    for (std::size_t c = 0; c < cout; ++c) {
      double s = 0;
      for (std::size_t tap = 0; tap < k; ++tap) {
        const long src = static_cast<long>(o * 2 + tap) - 2;
        if (src < 0 || src >= static_cast<long>(t)) continue;
        for (std::size_t i = 0; i < cin; ++i) s += x[src * cin + i] * w[(tap * cin + i) * cout + c];
      }
      CHECK(y.value()[o * cout + c] == doctest::Approx(s).epsilon(1e-12));
    }
}

TEST_CASE("joint_positions gradient and agreement with the raw kernel") {
  Rng rng(16);
  const std::size_t t = 7, j = 4, d = kinematics::feature_dim(j);
  const Tensor frames = random_tensor({2, t, d}, rng, 0.5);
  ag::Var y = ag::joint_positions(ag::Var(frames), j, 20.0);
  std::vector<double> ref(t * j * 3);
  kinematics::integrate(frames.ptr() + t * d, t, j, 20.0, ref.data());
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.value()[t * j * 3 + i] == ref[i]);
  using V = std::vector<ag::Var>;
  CHECK(check([&](const V& v) { return weighted_sum(ag::joint_positions(v[0], j, 20.0)); }, {frames}) < kTol);
}

TEST_CASE("gradients accumulate over shared subexpressions") {
  ag::Var x(Tensor({2}, std::vector<double>{1.5, -2.0}), true);
  ag::Var y = ag::sum(ag::add(ag::mul(x, x), x));
  ag::backward(y);
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(x.grad()[1] == doctest::Approx(-3.0));
}

TEST_CASE("no-grad guard builds no graph") {
  ag::Var x(Tensor({2}, 1.0), true);
  ag::NoGradGuard ng;
  ag::Var y = ag::sum(ag::square(x));
  CHECK_FALSE(y.requires_grad());
}
