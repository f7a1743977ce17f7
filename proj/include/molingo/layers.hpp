#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "molingo/autograd.hpp"
#include "molingo/rng.hpp"

namespace molingo::nn {

using ag::Var;

// Ordered registry of trainable tensors, addressed by dotted names.
class ParamSet {
 public:
  Var add(const std::string& name, Tensor init);
  const Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<std::pair<std::string, Var>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  std::map<std::string, Tensor> snapshot() const;
  // Copies values in place (modules keep their handles). Throws on a missing
  // name or a shape mismatch.
  void load(const std::map<std::string, Tensor>& tensors, const std::string& prefix = "");
  void copy_from(const ParamSet& other);

 private:
  std::vector<std::pair<std::string, Var>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class Init { Default, Zero };

class Linear {
 public:
  Linear() = default;
  Linear(ParamSet& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool bias = true,
         Init init = Init::Default);
  Var operator()(const Var& x) const;
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  const Var& weight() const { return weight_; }

 private:
  Var weight_;
  Var bias_;
  std::size_t in_ = 0, out_ = 0;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamSet& ps, const std::string& name, std::size_t dim, bool affine = true);
  Var operator()(const Var& x) const;

 private:
  Var gain_;
  Var shift_;
};

class CausalConv1d {
 public:
  CausalConv1d() = default;
  // Left padding is (kernel - 1) * dilation - (stride - 1), so an output at
  // index o sees inputs up to o * stride + stride - 1.
  CausalConv1d(ParamSet& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
               std::size_t stride, std::size_t dilation, Rng& rng, bool replicate = false, bool bias = true);
  Var operator()(const Var& x) const;
  Var without_bias(const Var& x) const;
  const ag::ConvSpec& spec() const { return spec_; }

 private:
  Var weight_;
  Var bias_;
  ag::ConvSpec spec_;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParamSet& ps, const std::string& name, std::size_t dim, std::size_t hidden, Rng& rng);
  Var operator()(const Var& x) const;

 private:
  Linear up_;
  Linear down_;
};

// Multi-head scaled dot-product attention. key_mask is [B, Tk] with 1 = keep.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamSet& ps, const std::string& name, std::size_t dim, std::size_t heads, Rng& rng);
  Var operator()(const Var& queries, const Var& keys_values, const std::vector<std::uint8_t>* key_mask) const;

 private:
  Linear q_, k_, v_, o_;
  std::size_t heads_ = 1;
};

// Sinusoidal embedding of scalar inputs (one per row) into `dim` channels.
Tensor sinusoidal_embedding(const std::vector<double>& values, std::size_t dim, double max_period = 10000.0);

}  // namespace molingo::nn
