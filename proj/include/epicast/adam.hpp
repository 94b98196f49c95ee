#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "epicast/tensor.hpp"

namespace epicast {

/// Per-parameter Adam accumulators. `step` counts completed updates and
/// drives the bias correction.
struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
};

/// One Adam update. Returns the new parameter tensor (still marked as
/// requiring gradients); the input tensor is left untouched so checkpoints
/// holding the old storage stay valid.
inline Tensor adam_step(const Tensor& param, const Tensor& grad, AdamState& state) {
  if (param.shape() != grad.shape())
    throw std::invalid_argument("adam_step gradient shape " + shape_string(grad.shape()) +
                                " does not match parameter " + shape_string(param.shape()));
  const std::size_t n = param.size();
  if (state.m.empty()) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  } else if (state.m.size() != n) {
    throw std::invalid_argument("adam_step state sized for a different parameter");
  }
  state.step += 1;
  const double correction1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  std::vector<double> next(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad.at(i);
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double mhat = state.m[i] / correction1;
    const double vhat = state.v[i] / correction2;
    next[i] = param.at(i) - state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
  }
  return Tensor::wrap(param.shape(), std::move(next)).with_grad();
}

}  // namespace epicast
