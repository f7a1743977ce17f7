#pragma once

#include <vector>

#include "molingo/layers.hpp"

namespace molingo::optim {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class Adam {
 public:
  Adam(nn::ParamSet& params, AdamConfig config);
  // One update with learning rate `lr` (overrides config.lr for this step).
  void step(double lr);
  void step() { step(config_.lr); }
  long steps() const { return t_; }

 private:
  nn::ParamSet& params_;
  AdamConfig config_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(nn::ParamSet& params, double max_norm);

// Shadow parameters: ema <- decay * ema + (1 - decay) * theta.
class Ema {
 public:
  Ema(const nn::ParamSet& params, double decay);
  void update(const nn::ParamSet& params);
  // One update with an explicit decay in [0, 1).
  void update(const nn::ParamSet& params, double decay);
  double decay() const { return decay_; }
  const std::vector<Tensor>& shadow() const { return shadow_; }
  // Writes the shadow values into a parameter set with the same layout.
  void copy_to(nn::ParamSet& target) const;

 private:
  double decay_;
  std::vector<Tensor> shadow_;
};

// Linear warmup from 0 to `peak` over `warmup` steps, constant afterwards.
double warmup_lr(long step, long warmup, double peak);

}  // namespace molingo::optim
