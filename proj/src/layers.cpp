#include "molingo/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace molingo::nn {

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

Var ParamSet::add(const std::string& name, Tensor init) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  Var v(std::move(init), true);
  index_[name] = entries_.size();
  entries_.emplace_back(name, v);
  return v;
}

const Var& ParamSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return entries_[it->second].second;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_) n += v.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& [name, v] : entries_) v.zero_grad();
}

std::map<std::string, Tensor> ParamSet::snapshot() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : entries_) out.emplace(name, v.value());
  return out;
}

void ParamSet::load(const std::map<std::string, Tensor>& tensors, const std::string& prefix) {
  for (auto& [name, v] : entries_) {
    auto it = tensors.find(prefix + name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint is missing tensor " + prefix + name);
    if (it->second.shape() != v.shape()) {
      throw std::runtime_error("tensor " + prefix + name + " has shape " + shape_str(it->second.shape()) +
                               ", model expects " + shape_str(v.shape()));
    }
    v.mutable_value() = it->second;
  }
}

void ParamSet::copy_from(const ParamSet& other) {
  if (other.size() != size()) throw std::invalid_argument("copy_from: parameter count mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i].second.mutable_value() = other.entries_[i].second.value();
}

Linear::Linear(ParamSet& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool bias,
               Init init)
    : in_(in), out_(out) {
  const double bound = init == Init::Zero ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = ps.add(name + ".weight", uniform_tensor({in, out}, bound, rng));
  if (bias) bias_ = ps.add(name + ".bias", init == Init::Zero ? Tensor({out}) : uniform_tensor({out}, bound, rng));
}

Var Linear::operator()(const Var& x) const {
  Var y = ag::matmul(x, weight_);
  return bias_ ? ag::add_row(y, bias_) : y;
}

LayerNorm::LayerNorm(ParamSet& ps, const std::string& name, std::size_t dim, bool affine) {
  if (affine) {
    gain_ = ps.add(name + ".gain", Tensor({dim}, 1.0));
    shift_ = ps.add(name + ".shift", Tensor({dim}, 0.0));
  }
}

Var LayerNorm::operator()(const Var& x) const {
  Var y = ag::layer_norm(x);
  if (gain_) y = ag::add_row(ag::mul_row(y, gain_), shift_);
  return y;
}

CausalConv1d::CausalConv1d(ParamSet& ps, const std::string& name, std::size_t in, std::size_t out,
                           std::size_t kernel, std::size_t stride, std::size_t dilation, Rng& rng, bool replicate,
                           bool bias) {
  spec_.kernel = kernel;
  spec_.stride = stride;
  spec_.dilation = dilation;
  spec_.left_pad = (kernel - 1) * dilation - (stride - 1);
  spec_.replicate = replicate;
  const double bound = 1.0 / std::sqrt(static_cast<double>(kernel * in));
  weight_ = ps.add(name + ".weight", uniform_tensor({kernel * in, out}, bound, rng));
  if (bias) bias_ = ps.add(name + ".bias", uniform_tensor({out}, bound, rng));
}

Var CausalConv1d::operator()(const Var& x) const { return ag::conv1d(x, weight_, bias_, spec_); }
Var CausalConv1d::without_bias(const Var& x) const { return ag::conv1d(x, weight_, Var(), spec_); }

FeedForward::FeedForward(ParamSet& ps, const std::string& name, std::size_t dim, std::size_t hidden, Rng& rng)
    : up_(ps, name + ".up", dim, hidden, rng), down_(ps, name + ".down", hidden, dim, rng) {}

Var FeedForward::operator()(const Var& x) const { return down_(ag::gelu(up_(x))); }

MultiHeadAttention::MultiHeadAttention(ParamSet& ps, const std::string& name, std::size_t dim, std::size_t heads,
                                       Rng& rng)
    : q_(ps, name + ".q", dim, dim, rng),
      k_(ps, name + ".k", dim, dim, rng),
      v_(ps, name + ".v", dim, dim, rng),
      o_(ps, name + ".o", dim, dim, rng),
      heads_(heads) {
  if (dim % heads != 0) throw std::invalid_argument("attention width must be divisible by head count");
}

Var MultiHeadAttention::operator()(const Var& queries, const Var& keys_values,
                                   const std::vector<std::uint8_t>* key_mask) const {
  const std::size_t dh = queries.shape().back() / heads_;
  Var q = ag::split_heads(q_(queries), heads_);
  Var k = ag::split_heads(k_(keys_values), heads_);
  Var v = ag::split_heads(v_(keys_values), heads_);
  Var scores = ag::scale(ag::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh)));
  Var attn = ag::masked_softmax(scores, key_mask, heads_);
  return o_(ag::merge_heads(ag::bmm(attn, v, false), heads_));
}

Tensor sinusoidal_embedding(const std::vector<double>& values, std::size_t dim, double max_period) {
  Tensor out({values.size(), dim});
  const std::size_t half = dim / 2;
  for (std::size_t r = 0; r < values.size(); ++r)
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(max_period) * static_cast<double>(i) / static_cast<double>(half));
      out.at(r, i) = std::cos(values[r] * freq);
      out.at(r, half + i) = std::sin(values[r] * freq);
    }
  return out;
}

}  // namespace molingo::nn
