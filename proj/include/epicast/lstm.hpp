#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "epicast/ops.hpp"
#include "epicast/rng.hpp"
#include "epicast/tensor.hpp"

namespace epicast {

/// Gate parameters of one LSTM cell. Input weights are h x d, recurrent
/// weights h x h, applied as x Wᵀ + h Uᵀ + b.
struct LstmParams {
  Tensor w_forget, w_input, w_output, w_cell;
  Tensor u_forget, u_input, u_output, u_cell;
  Tensor b_forget, b_input, b_output, b_cell;

  std::size_t hidden() const { return w_forget.rows(); }
  std::size_t input_dim() const { return w_forget.cols(); }

  /// Uniform(-1/sqrt(h), 1/sqrt(h)) weights; the forget bias starts at +1 so
  /// early training keeps cell memory instead of flushing it.
  static LstmParams init(std::size_t input_dim, std::size_t hidden, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    auto w = [&] { return Tensor::uniform({hidden, input_dim}, -bound, bound, rng).with_grad(); };
    auto u = [&] { return Tensor::uniform({hidden, hidden}, -bound, bound, rng).with_grad(); };
    LstmParams p;
    p.w_forget = w();
    p.w_input = w();
    p.w_output = w();
    p.w_cell = w();
    p.u_forget = u();
    p.u_input = u();
    p.u_output = u();
    p.u_cell = u();
    p.b_forget = Tensor::full({hidden}, 1.0).with_grad();
    p.b_input = Tensor::zeros({hidden}).with_grad();
    p.b_output = Tensor::zeros({hidden}).with_grad();
    p.b_cell = Tensor::zeros({hidden}).with_grad();
    return p;
  }
};

/// Hidden and cell activations for a batch of sequences, batch x h each.
struct LstmState {
  Tensor h;
  Tensor c;

  static LstmState initial(std::size_t batch, std::size_t hidden) {
    return {Tensor::zeros({batch, hidden}), Tensor::zeros({batch, hidden})};
  }
};

namespace detail {
inline Tensor as_row_matrix(const Tensor& x) {
  return x.rank() == 1 ? x.reshaped({1, x.size()}) : x;
}
}  // namespace detail

/// One step of the gated recurrence:
///   f,i,o = sigmoid(x Wᵀ + h Uᵀ + b),  c~ = tanh(x Wᵀ + h Uᵀ + b)
///   c' = f ⊙ c + i ⊙ c~,  h' = o ⊙ tanh(c')
inline LstmState lstm_cell_step(const Tensor& x_t, const LstmState& state, const LstmParams& p) {
  const Tensor x = detail::as_row_matrix(x_t);
  if (x.cols() != p.input_dim())
    throw std::invalid_argument("lstm_cell_step input width " + std::to_string(x.cols()) +
                                ", cell expects " + std::to_string(p.input_dim()));
  if (state.h.rows() != x.rows() || state.h.cols() != p.hidden())
    throw std::invalid_argument("lstm_cell_step state shape " + shape_string(state.h.shape()));
  auto gate = [&](const Tensor& w, const Tensor& u, const Tensor& b) {
    return add_rowwise(add(matmul(x, transpose(w)), matmul(state.h, transpose(u))), b);
  };
  const Tensor f = sigmoid(gate(p.w_forget, p.u_forget, p.b_forget));
  const Tensor i = sigmoid(gate(p.w_input, p.u_input, p.b_input));
  const Tensor o = sigmoid(gate(p.w_output, p.u_output, p.b_output));
  const Tensor c_tilde = tanh_act(gate(p.w_cell, p.u_cell, p.b_cell));
  const Tensor c = add(hadamard(f, state.c), hadamard(i, c_tilde));
  return {hadamard(o, tanh_act(c)), c};
}

/// A stack of LSTM layers; `backward` is empty for unidirectional stacks and
/// otherwise holds the reverse-direction cell of each layer.
struct LstmStack {
  std::vector<LstmParams> forward;
  std::vector<LstmParams> backward;

  bool bidirectional() const { return !backward.empty(); }
  std::size_t layers() const { return forward.size(); }
  std::size_t hidden() const { return forward.front().hidden(); }
  std::size_t output_dim() const { return hidden() * (bidirectional() ? 2 : 1); }

  static LstmStack init(std::size_t input_dim, std::size_t hidden, std::size_t layers,
                        bool bidirectional, Rng& rng) {
    if (layers == 0) throw std::invalid_argument("lstm stack with zero layers");
    LstmStack s;
    std::size_t d = input_dim;
    for (std::size_t l = 0; l < layers; ++l) {
      s.forward.push_back(LstmParams::init(d, hidden, rng));
      if (bidirectional) s.backward.push_back(LstmParams::init(d, hidden, rng));
      d = hidden * (bidirectional ? 2 : 1);
    }
    return s;
  }
};

/// Unrolls the stack over `xs` (one batch x d tensor per step, oldest first)
/// and returns the top layer's per-step outputs, batch x h, or batch x 2h
/// when bidirectional (forward and time-reversed passes concatenated).
inline std::vector<Tensor> lstm_sequence(std::span<const Tensor> xs, const LstmStack& stack) {
  if (xs.empty()) throw std::invalid_argument("lstm_sequence over an empty sequence");
  std::vector<Tensor> inputs;
  inputs.reserve(xs.size());
  for (const Tensor& x : xs) inputs.push_back(detail::as_row_matrix(x));
  const std::size_t batch = inputs.front().rows();
  const std::size_t steps = inputs.size();

  for (std::size_t layer = 0; layer < stack.layers(); ++layer) {
    const LstmParams& fwd = stack.forward[layer];
    std::vector<Tensor> fwd_out;
    fwd_out.reserve(steps);
    LstmState state = LstmState::initial(batch, fwd.hidden());
    for (const Tensor& x : inputs) {
      state = lstm_cell_step(x, state, fwd);
      fwd_out.push_back(state.h);
    }
    if (!stack.bidirectional()) {
      inputs = std::move(fwd_out);
      continue;
    }
    const LstmParams& bwd = stack.backward[layer];
    std::vector<Tensor> bwd_out(steps);
    state = LstmState::initial(batch, bwd.hidden());
    for (std::size_t t = steps; t-- > 0;) {
      state = lstm_cell_step(inputs[t], state, bwd);
      bwd_out[t] = state.h;
    }
    std::vector<Tensor> merged;
    merged.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) merged.push_back(hcat(fwd_out[t], bwd_out[t]));
    inputs = std::move(merged);
  }
  return inputs;
}

}  // namespace epicast
