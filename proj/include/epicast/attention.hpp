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

/// Projections of one attention head, each h x d, applied as X Wᵀ.
struct AttentionHeadParams {
  Tensor w_query, w_key, w_value;

  std::size_t head_dim() const { return w_query.rows(); }
  std::size_t input_dim() const { return w_query.cols(); }

  static AttentionHeadParams init(std::size_t input_dim, std::size_t head_dim, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(head_dim));
    auto w = [&] { return Tensor::uniform({head_dim, input_dim}, -bound, bound, rng).with_grad(); };
    return {w(), w(), w()};
  }
};

/// Scaled dot-product scores QKᵀ/sqrt(h), before the row softmax.
inline Tensor attention_scores(const Tensor& x, const AttentionHeadParams& head) {
  if (x.rank() != 2 || x.cols() != head.input_dim())
    throw std::invalid_argument("attention input " + shape_string(x.shape()) + " for head of width " +
                                std::to_string(head.input_dim()));
  const Tensor q = matmul(x, transpose(head.w_query));
  const Tensor k = matmul(x, transpose(head.w_key));
  return scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(head.head_dim())));
}

/// softmax(QKᵀ/sqrt(h)) V for one head; L x d in, L x h out.
inline Tensor self_attention(const Tensor& x, const AttentionHeadParams& head) {
  const Tensor weights = softmax(attention_scores(x, head));
  const Tensor v = matmul(x, transpose(head.w_value));
  return matmul(weights, v);
}

/// One or more heads plus the square output projection over their
/// concatenation.
struct AttentionParams {
  std::vector<AttentionHeadParams> heads;
  Tensor w_out;  // (n*h) x (n*h)

  std::size_t output_dim() const { return w_out.cols(); }

  static AttentionParams init(std::size_t input_dim, std::size_t head_count, std::size_t head_dim,
                              Rng& rng) {
    if (head_count == 0) throw std::invalid_argument("attention with zero heads");
    AttentionParams p;
    for (std::size_t h = 0; h < head_count; ++h)
      p.heads.push_back(AttentionHeadParams::init(input_dim, head_dim, rng));
    const std::size_t width = head_count * head_dim;
    const double bound = 1.0 / std::sqrt(static_cast<double>(width));
    p.w_out = Tensor::uniform({width, width}, -bound, bound, rng).with_grad();
    return p;
  }
};

/// Concat(H_1..H_n) W_O.
inline Tensor multi_head(const Tensor& x, const AttentionParams& p) {
  if (p.heads.empty()) throw std::invalid_argument("multi_head with zero heads");
  const std::size_t head_dim = p.heads.front().head_dim();
  std::vector<Tensor> outputs;
  outputs.reserve(p.heads.size());
  for (const AttentionHeadParams& head : p.heads) {
    if (head.head_dim() != head_dim || head.input_dim() != p.heads.front().input_dim())
      throw std::invalid_argument("multi_head with inconsistent head shapes");
    outputs.push_back(self_attention(x, head));
  }
  const Tensor concat = outputs.size() == 1 ? outputs.front() : hcat(outputs);
  if (concat.cols() != p.w_out.rows())
    throw std::invalid_argument("multi_head projection expects width " +
                                std::to_string(p.w_out.rows()) + ", heads produce " +
                                std::to_string(concat.cols()));
  return matmul(concat, p.w_out);
}

/// sin/cos position table, L x dim; even columns sine, odd columns cosine,
/// wavelengths geometric in 10^4.
inline Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
  std::vector<double> out(length * dim);
  for (std::size_t t = 0; t < length; ++t)
    for (std::size_t j = 0; j < dim; ++j) {
      const double exponent = static_cast<double>(2 * (j / 2)) / static_cast<double>(dim);
      const double angle = static_cast<double>(t) / std::pow(10000.0, exponent);
      out[t * dim + j] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return Tensor::matrix(length, dim, std::move(out));
}

/// Post-norm transformer encoder block. The attention width must equal the
/// token width so the residual additions type-check.
struct EncoderLayerParams {
  AttentionParams attention;
  Tensor norm1_gain, norm1_bias;
  Tensor norm2_gain, norm2_bias;
  Tensor ff_w1, ff_b1;  // d x ff
  Tensor ff_w2, ff_b2;  // ff x d

  std::size_t token_dim() const { return norm1_gain.size(); }

  static EncoderLayerParams init(std::size_t token_dim, std::size_t head_count, std::size_t ff_dim,
                                 Rng& rng) {
    if (token_dim % head_count != 0)
      throw std::invalid_argument("token width " + std::to_string(token_dim) +
                                  " not divisible into " + std::to_string(head_count) + " heads");
    EncoderLayerParams p;
    p.attention = AttentionParams::init(token_dim, head_count, token_dim / head_count, rng);
    p.norm1_gain = Tensor::full({token_dim}, 1.0).with_grad();
    p.norm1_bias = Tensor::zeros({token_dim}).with_grad();
    p.norm2_gain = Tensor::full({token_dim}, 1.0).with_grad();
    p.norm2_bias = Tensor::zeros({token_dim}).with_grad();
    const double b1 = 1.0 / std::sqrt(static_cast<double>(token_dim));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(ff_dim));
    p.ff_w1 = Tensor::uniform({token_dim, ff_dim}, -b1, b1, rng).with_grad();
    p.ff_b1 = Tensor::zeros({ff_dim}).with_grad();
    p.ff_w2 = Tensor::uniform({ff_dim, token_dim}, -b2, b2, rng).with_grad();
    p.ff_b2 = Tensor::zeros({token_dim}).with_grad();
    return p;
  }
};

/// attention -> residual -> layer norm -> feed-forward -> residual -> layer
/// norm, with optional sinusoidal positions added to the inputs first.
inline Tensor transformer_encode(const Tensor& x, const EncoderLayerParams& p, bool positional) {
  if (x.rank() != 2 || x.cols() != p.token_dim())
    throw std::invalid_argument("transformer_encode input " + shape_string(x.shape()) +
                                " for token width " + std::to_string(p.token_dim()));
  const Tensor xp = positional ? add(x, sinusoidal_positions(x.rows(), x.cols())) : x;
  const Tensor attended = multi_head(xp, p.attention);
  if (attended.cols() != xp.cols())
    throw std::invalid_argument("attention width " + std::to_string(attended.cols()) +
                                " breaks the residual of width " + std::to_string(xp.cols()));
  const Tensor y1 = layer_norm(add(xp, attended), p.norm1_gain, p.norm1_bias);
  const Tensor ff = affine(relu(affine(y1, p.ff_w1, p.ff_b1)), p.ff_w2, p.ff_b2);
  return layer_norm(add(y1, ff), p.norm2_gain, p.norm2_bias);
}

}  // namespace epicast
