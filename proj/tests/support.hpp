#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "molingo/autograd.hpp"
#include "molingo/rng.hpp"

namespace molingo::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t directions = 0;
};

// Compares analytic directional derivatives of a scalar function of `inputs`
// against central differences along random directions.
inline GradCheck directional_grad_check(const std::function<ag::Var(const std::vector<ag::Var>&)>& f,
                                        const std::vector<Tensor>& inputs, std::size_t directions, Rng& rng,
                                        double step = 1e-5, double floor = 1e-7) {
  std::vector<ag::Var> vars;
  for (const auto& t : inputs) vars.emplace_back(t, true);
  ag::Var out = f(vars);
  ag::backward(out);
  std::vector<Tensor> grads;
  for (auto& v : vars) grads.push_back(v.grad().empty() ? Tensor(v.shape()) : v.grad());

  auto eval = [&](const std::vector<Tensor>& xs) {
    ag::NoGradGuard ng;
    std::vector<ag::Var> vs;
    for (const auto& t : xs) vs.emplace_back(t, false);
    return f(vs).item();
  };

  GradCheck result;
  for (std::size_t d = 0; d < directions; ++d) {
    std::vector<Tensor> dir;
    double analytic = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      dir.push_back(random_tensor(inputs[i].shape(), rng));
      for (std::size_t k = 0; k < dir[i].numel(); ++k) analytic += grads[i][k] * dir[i][k];
    }
    std::vector<Tensor> plus = inputs, minus = inputs;
    for (std::size_t i = 0; i < inputs.size(); ++i)
      for (std::size_t k = 0; k < dir[i].numel(); ++k) {
        plus[i][k] += step * dir[i][k];
        minus[i][k] -= step * dir[i][k];
      }
    const double numeric = (eval(plus) - eval(minus)) / (2.0 * step);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(analytic - numeric) / denom);
    ++result.directions;
  }
  return result;
}

}  // namespace molingo::testing
