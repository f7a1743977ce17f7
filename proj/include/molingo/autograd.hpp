#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "molingo/tensor.hpp"

// Tape-free reverse-mode differentiation over Tensor values. Each op result
// holds its parents and a closure that pushes the output gradient back into
// them; backward() walks the graph in reverse topological order.
namespace molingo::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  // Allocates a zero gradient of the value's shape on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad_buffer() { return node_->grad_buffer(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t numel() const { return node_->value.numel(); }
  double item() const { return node_->value.item(); }
  void zero_grad();
  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph construction in the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Seeds d(root)/d(root) = 1 (root must be a single element) and accumulates
// gradients into every reachable node that requires them.
void backward(const Var& root);

Var constant(Tensor value);

// Elementwise, same shape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double c);
Var add_scalar(const Var& x, double c);
// x * s where s holds a single element.
Var mul_scalar_var(const Var& x, const Var& s);
Var silu(const Var& x);
Var gelu(const Var& x);
Var exp(const Var& x);
Var square(const Var& x);

// Broadcast a length-cols vector over the rows of x.
Var add_row(const Var& x, const Var& row);
Var mul_row(const Var& x, const Var& row);

// x viewed as [rows, K] times w [K, N] -> shape of x with last dim N.
Var matmul(const Var& x, const Var& w);
// a [M, K] times b[N, K]^T -> [M, N].
Var matmul_nt(const Var& a, const Var& b);
// Batched: a [G, M, K] x b [G, K, N] (or b [G, N, K] when trans_b) -> [G, M, N].
Var bmm(const Var& a, const Var& b, bool trans_b);

// Softmax over the last dim of x [G, M, N]. Optional key mask [B, N] with
// G = B * heads; masked keys get zero weight.
Var masked_softmax(const Var& x, const std::vector<std::uint8_t>* key_mask, std::size_t heads);
Var layer_norm(const Var& x, double eps = 1e-6);

// [B, T, H*dh] <-> [B*H, T, dh]
Var split_heads(const Var& x, std::size_t heads);
Var merge_heads(const Var& x, std::size_t heads);

Var reshape(const Var& x, Shape shape);
Var slice_cols(const Var& x, std::size_t start, std::size_t len);
Var concat_cols(const std::vector<Var>& parts);
// Rows of x viewed as [rows, cols].
Var gather_rows(const Var& x, const std::vector<std::size_t>& rows);

Var sum(const Var& x);
Var mean(const Var& x);
Var mse(const Var& a, const Var& b);

struct ConvSpec {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t left_pad = 2;
  bool replicate = false;  // replicate the first frame instead of zero padding
};
std::size_t conv_output_length(std::size_t length, const ConvSpec& spec);
// x [B, T, Cin], w [K*Cin, Cout] (tap-major), bias [Cout] or empty Var.
Var conv1d(const Var& x, const Var& w, const Var& bias, const ConvSpec& spec);
// Nearest-neighbour x2 upsampling along time: x [B, T, C] -> [B, 2T, C].
Var upsample2(const Var& x);
// x [B, T, F] -> [B, T-1, F] first differences along time.
Var temporal_diff(const Var& x);
// Masked mean over time: x [B, T, C], lengths[b] valid frames -> [B, C].
Var mean_pool_time(const Var& x, const std::vector<std::size_t>& lengths);

// Row-wise cosine similarity of a, b [M, d] -> [M]; norms clamped at eps.
Var row_cosine(const Var& a, const Var& b, double eps = 1e-8);
Var l2_normalize_rows(const Var& x, double eps = 1e-8);
// Mean cross entropy of logits [M, N] against target column per row.
Var cross_entropy_rows(const Var& logits, const std::vector<std::size_t>& targets);

// Differentiable kinematic recovery for the velocity/local-position motion
// layout: frames [B, T, D] with D = 4 + 3(J-1) -> joints [B, T, J*3].
Var joint_positions(const Var& frames, std::size_t joints, double fps);

}  // namespace molingo::ag
