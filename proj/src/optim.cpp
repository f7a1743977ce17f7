#include "molingo/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace molingo::optim {

Adam::Adam(nn::ParamSet& params, AdamConfig config) : params_(params), config_(config) {
  for (const auto& [name, v] : params_.entries()) {
    m_.emplace_back(v.shape());
    v_.emplace_back(v.shape());
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  auto& entries = params_.entries();
  for (std::size_t p = 0; p < entries.size(); ++p) {
    ag::Var& var = entries[p].second;
    if (var.grad().empty()) continue;
    Tensor& w = var.mutable_value();
    const Tensor& g = var.grad();
    Tensor& m = m_[p];
    Tensor& v = v_[p];
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const double gi = g[i] + config_.weight_decay * w[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
      w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
    }
  }
}

double clip_grad_norm(nn::ParamSet& params, double max_norm) {
  double sq = 0.0;
  for (auto& [name, v] : params.entries())
    for (double g : v.grad().data()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, v] : params.entries())
      for (double& g : v.grad_buffer().data()) g *= s;
  }
  return norm;
}

Ema::Ema(const nn::ParamSet& params, double decay) : decay_(decay) {
  if (decay < 0.0 || decay >= 1.0) throw std::invalid_argument("EMA decay must lie in [0, 1)");
  for (const auto& [name, v] : params.entries()) shadow_.push_back(v.value());
}

void Ema::update(const nn::ParamSet& params) { update(params, decay_); }

void Ema::update(const nn::ParamSet& params, double decay) {
  if (decay < 0.0 || decay >= 1.0) throw std::invalid_argument("EMA decay must lie in [0, 1)");
  const auto& entries = params.entries();
  for (std::size_t p = 0; p < entries.size(); ++p) {
    const Tensor& theta = entries[p].second.value();
    Tensor& s = shadow_[p];
    for (std::size_t i = 0; i < s.numel(); ++i) s[i] = decay * s[i] + (1.0 - decay) * theta[i];
  }
}

void Ema::copy_to(nn::ParamSet& target) const {
  auto& entries = target.entries();
  if (entries.size() != shadow_.size()) throw std::invalid_argument("EMA layout mismatch");
  for (std::size_t p = 0; p < entries.size(); ++p) entries[p].second.mutable_value() = shadow_[p];
}

double warmup_lr(long step, long warmup, double peak) {
  if (warmup <= 0 || step >= warmup) return peak;
  return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

}  // namespace molingo::optim
