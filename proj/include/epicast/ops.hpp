#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "epicast/rng.hpp"
#include "epicast/tensor.hpp"

namespace epicast {

namespace detail {

inline void ensure_finite(const char* op, const std::vector<double>& values) {
  for (double v : values) {
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("non-finite value produced by ") + op);
  }
}

inline void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

/// Wraps a freshly computed buffer and records the node on the active tape.
inline Tensor make_op(const char* op, Shape shape, std::vector<double> values,
                      std::initializer_list<const Tensor*> inputs, Tape::PullFn pull) {
  ensure_finite(op, values);
  Tensor out = Tensor::wrap(std::move(shape), std::move(values));
  if (Tape* tape = Tape::active()) tape->record(out, op, inputs, std::move(pull));
  return out;
}

/// Like make_op, but hands the finished tensor to a closure factory first so
/// backward formulas written in terms of the outputs can capture them.
template <typename MakePull>
Tensor make_op_on_result(const char* op, Shape shape, std::vector<double> values,
                         std::initializer_list<const Tensor*> inputs, MakePull make_pull) {
  ensure_finite(op, values);
  Tensor out = Tensor::wrap(std::move(shape), std::move(values));
  if (Tape* tape = Tape::active()) tape->record(out, op, inputs, make_pull(out));
  return out;
}

inline void accumulate(std::vector<double>* slot, std::size_t i, double v) {
  if (slot) (*slot)[i] += v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.rows(),
                  "matmul shapes " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const std::size_t r = a.rows(), k = a.cols(), c = b.cols();
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(r * c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += aip * bv[p * c + j];
    }
  return detail::make_op(
      "matmul", {r, c}, std::move(out), {&a, &b},
      [a, b, r, k, c](const std::vector<double>& g, const Tape::GradSlots& gin) {
        const auto& av = a.values();
        const auto& bv = b.values();
        if (gin[0])
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              const double gij = g[i * c + j];
              if (gij == 0.0) continue;
              for (std::size_t p = 0; p < k; ++p) (*gin[0])[i * k + p] += gij * bv[p * c + j];
            }
        if (gin[1])
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = av[i * k + p];
              if (aip == 0.0) continue;
              for (std::size_t j = 0; j < c; ++j) (*gin[1])[p * c + j] += aip * g[i * c + j];
            }
      });
}

inline Tensor transpose(const Tensor& a) {
  detail::require(a.rank() == 2, "transpose on tensor of shape " + shape_string(a.shape()));
  const std::size_t r = a.rows(), c = a.cols();
  const auto& av = a.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return detail::make_op("transpose", {c, r}, std::move(out), {&a},
                         [r, c](const std::vector<double>& g, const Tape::GradSlots& gin) {
                           if (!gin[0]) return;
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j) (*gin[0])[i * c + j] += g[j * r + i];
                         });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(),
                  "add shapes " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return detail::make_op("add", a.shape(), std::move(out), {&a, &b},
                         [](const std::vector<double>& g, const Tape::GradSlots& gin) {
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             detail::accumulate(gin[0], i, g[i]);
                             detail::accumulate(gin[1], i, g[i]);
                           }
                         });
}

/// Adds a length-c vector to every row of an r x c matrix.
inline Tensor add_rowwise(const Tensor& m, const Tensor& v) {
  detail::require(m.rank() == 2 && v.rank() == 1 && v.size() == m.cols(),
                  "add_rowwise shapes " + shape_string(m.shape()) + " vs " + shape_string(v.shape()));
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.at(i, j) + v.at(j);
  return detail::make_op("add_rowwise", {r, c}, std::move(out), {&m, &v},
                         [r, c](const std::vector<double>& g, const Tape::GradSlots& gin) {
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j) {
                               detail::accumulate(gin[0], i * c + j, g[i * c + j]);
                               detail::accumulate(gin[1], j, g[i * c + j]);
                             }
                         });
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(),
                  "hadamard shapes " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return detail::make_op("hadamard", a.shape(), std::move(out), {&a, &b},
                         [a, b](const std::vector<double>& g, const Tape::GradSlots& gin) {
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             detail::accumulate(gin[0], i, g[i] * b.at(i));
                             detail::accumulate(gin[1], i, g[i] * a.at(i));
                           }
                         });
}

inline Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * factor;
  return detail::make_op("scale", a.shape(), std::move(out), {&a},
                         [factor](const std::vector<double>& g, const Tape::GradSlots& gin) {
                           for (std::size_t i = 0; i < g.size(); ++i)
                             detail::accumulate(gin[0], i, g[i] * factor);
                         });
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.at(i);
    // Split on sign so exp never overflows.
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return detail::make_op_on_result(
      "sigmoid", a.shape(), std::move(out), {&a}, [](const Tensor& result) {
        return [result](const std::vector<double>& g, const Tape::GradSlots& gin) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = result.at(i);
            detail::accumulate(gin[0], i, g[i] * s * (1.0 - s));
          }
        };
      });
}

inline Tensor tanh_act(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.at(i));
  return detail::make_op_on_result(
      "tanh", a.shape(), std::move(out), {&a}, [](const Tensor& result) {
        return [result](const std::vector<double>& g, const Tape::GradSlots& gin) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double t = result.at(i);
            detail::accumulate(gin[0], i, g[i] * (1.0 - t * t));
          }
        };
      });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) > 0.0 ? a.at(i) : 0.0;
  return detail::make_op("relu", a.shape(), std::move(out), {&a},
                         [a](const std::vector<double>& g, const Tape::GradSlots& gin) {
                           for (std::size_t i = 0; i < g.size(); ++i)
                             if (a.at(i) > 0.0) detail::accumulate(gin[0], i, g[i]);
                         });
}

/// x^(-1/2) elementwise, mapping non-positive entries to zero. Used to scale
/// by inverse square-root degrees when a coarse graph may contain isolated
/// clusters; the zero branch has zero derivative.
inline Tensor rsqrt_or_zero(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) > 0.0 ? 1.0 / std::sqrt(a.at(i)) : 0.0;
  return detail::make_op_on_result(
      "rsqrt_or_zero", a.shape(), std::move(out), {&a}, [](const Tensor& result) {
        return [result](const std::vector<double>& g, const Tape::GradSlots& gin) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double y = result.at(i);
            detail::accumulate(gin[0], i, g[i] * -0.5 * y * y * y);
          }
        };
      });
}

// ---------------------------------------------------------------------------
// Reductions and shape ops

namespace detail {
inline void softmax_fill(const double* in, double* out, std::size_t n, std::size_t stride) {
  double mx = in[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i * stride]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = std::exp(in[i * stride] - mx);
    out[i * stride] = e;
    sum += e;
  }
  for (std::size_t i = 0; i < n; ++i) out[i * stride] /= sum;
}
}  // namespace detail

/// Softmax along the last axis: over the whole vector for rank 1, over each
/// row for rank 2. Max-shifted so large equal inputs stay exact.
inline Tensor softmax(const Tensor& a) {
  detail::require(a.rank() == 1 || a.rank() == 2,
                  "softmax on tensor of shape " + shape_string(a.shape()));
  const std::size_t rows = a.rank() == 2 ? a.rows() : 1;
  const std::size_t cols = a.rank() == 2 ? a.cols() : a.size();
  detail::require(cols > 0, "softmax over an empty axis");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < rows; ++i)
    detail::softmax_fill(a.values().data() + i * cols, out.data() + i * cols, cols, 1);
  return detail::make_op_on_result(
      "softmax", a.shape(), std::move(out), {&a}, [rows, cols](const Tensor& result) {
        return [result, rows, cols](const std::vector<double>& g, const Tape::GradSlots& gin) {
          if (!gin[0]) return;
          for (std::size_t i = 0; i < rows; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += g[i * cols + j] * result.at(i * cols + j);
            for (std::size_t j = 0; j < cols; ++j) {
              const double s = result.at(i * cols + j);
              (*gin[0])[i * cols + j] += s * (g[i * cols + j] - dot);
            }
          }
        };
      });
}

inline Tensor mean_rows(const Tensor& m) {
  detail::require(m.rank() == 2 && m.rows() > 0,
                  "mean_rows on tensor of shape " + shape_string(m.shape()));
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += m.at(i, j);
  for (double& x : out) x /= static_cast<double>(r);
  return detail::make_op("mean_rows", {c}, std::move(out), {&m},
                         [r, c](const std::vector<double>& g, const Tape::GradSlots& gin) {
                           if (!gin[0]) return;
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j)
                               (*gin[0])[i * c + j] += g[j] / static_cast<double>(r);
                         });
}

inline Tensor sum_all(const Tensor& a) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += a.at(i);
  return detail::make_op("sum_all", {1}, {total}, {&a},
                         [](const std::vector<double>& g, const Tape::GradSlots& gin) {
                           if (!gin[0]) return;
                           for (double& slot : *gin[0]) slot += g[0];
                         });
}

inline Tensor broadcast_rows(const Tensor& v, std::size_t rows) {
  detail::require(v.rank() == 1, "broadcast_rows on tensor of shape " + shape_string(v.shape()));
  const std::size_t c = v.size();
  std::vector<double> out(rows * c);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = v.at(j);
  return detail::make_op("broadcast_rows", {rows, c}, std::move(out), {&v},
                         [rows, c](const std::vector<double>& g, const Tape::GradSlots& gin) {
                           if (!gin[0]) return;
                           for (std::size_t i = 0; i < rows; ++i)
                             for (std::size_t j = 0; j < c; ++j) (*gin[0])[j] += g[i * c + j];
                         });
}

inline Tensor slice_rows(const Tensor& m, std::size_t begin, std::size_t count) {
  detail::require(m.rank() == 2 && begin + count <= m.rows(),
                  "slice_rows [" + std::to_string(begin) + ", +" + std::to_string(count) + ") of " +
                      shape_string(m.shape()));
  const std::size_t c = m.cols();
  std::vector<double> out(count * c);
  std::copy_n(m.values().begin() + static_cast<std::ptrdiff_t>(begin * c), count * c, out.begin());
  return detail::make_op("slice_rows", {count, c}, std::move(out), {&m},
                         [begin, count, c](const std::vector<double>& g, const Tape::GradSlots& gin) {
                           if (!gin[0]) return;
                           for (std::size_t i = 0; i < count * c; ++i)
                             (*gin[0])[begin * c + i] += g[i];
                         });
}

/// Row i of a matrix as a vector.
inline Tensor row(const Tensor& m, std::size_t i) {
  return slice_rows(m, i, 1).reshaped({m.cols()});
}

inline Tensor hcat(std::span<const Tensor> parts) {
  detail::require(!parts.empty(), "hcat of zero tensors");
  const std::size_t r = parts.front().rows();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    detail::require(p.rank() == 2 && p.rows() == r, "hcat with mismatched row counts");
    total += p.cols();
  }
  std::vector<double> out(r * total);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out[i * total + offset + j] = p.at(i, j);
    offset += p.cols();
  }
  Tensor result = Tensor::wrap({r, total}, std::move(out));
  detail::ensure_finite("hcat", result.values());
  if (Tape* tape = Tape::active()) {
    // Fold the parts in pairwise so the node arity stays fixed.
    std::vector<std::size_t> widths;
    widths.reserve(parts.size());
    for (const Tensor& p : parts) widths.push_back(p.cols());
    std::vector<Tensor> owned(parts.begin(), parts.end());
    std::vector<const Tensor*> refs;
    refs.reserve(owned.size());
    for (const Tensor& p : owned) refs.push_back(&p);
    tape->record_many(result, "hcat", refs,
                      [r, total, widths](const std::vector<double>& g, const Tape::GradSlots& gin) {
                        std::size_t offset = 0;
                        for (std::size_t k = 0; k < widths.size(); ++k) {
                          if (gin[k])
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < widths[k]; ++j)
                                (*gin[k])[i * widths[k] + j] += g[i * total + offset + j];
                          offset += widths[k];
                        }
                      });
  }
  return result;
}

inline Tensor hcat(const Tensor& a, const Tensor& b) {
  const Tensor parts[] = {a, b};
  return hcat(std::span<const Tensor>(parts, 2));
}

inline Tensor vcat(std::span<const Tensor> parts) {
  detail::require(!parts.empty(), "vcat of zero tensors");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    detail::require(p.rank() == 2 && p.cols() == c, "vcat with mismatched column counts");
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * c);
  for (const Tensor& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  Tensor result = Tensor::wrap({total, c}, std::move(out));
  detail::ensure_finite("vcat", result.values());
  if (Tape* tape = Tape::active()) {
    std::vector<std::size_t> heights;
    heights.reserve(parts.size());
    for (const Tensor& p : parts) heights.push_back(p.rows());
    std::vector<Tensor> owned(parts.begin(), parts.end());
    std::vector<const Tensor*> refs;
    refs.reserve(owned.size());
    for (const Tensor& p : owned) refs.push_back(&p);
    tape->record_many(result, "vcat", refs,
                      [c, heights](const std::vector<double>& g, const Tape::GradSlots& gin) {
                        std::size_t offset = 0;
                        for (std::size_t k = 0; k < heights.size(); ++k) {
                          const std::size_t block = heights[k] * c;
                          if (gin[k])
                            for (std::size_t i = 0; i < block; ++i) (*gin[k])[i] += g[offset + i];
                          offset += block;
                        }
                      });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Regularisation

/// Inverted dropout: kept entries are scaled by 1/(1-rate) during training so
/// the expected activation is unchanged; evaluation is the identity.
inline Tensor dropout(const Tensor& a, double rate, bool training, Rng* rng) {
  detail::require(rate >= 0.0 && rate < 1.0, "dropout rate " + std::to_string(rate) + " outside [0,1)");
  if (!training || rate == 0.0) return a;
  detail::require(rng != nullptr, "dropout in training mode needs a random stream");
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(a.size());
  for (double& m : *mask) m = (rng->uniform() < rate) ? 0.0 : keep_scale;
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * (*mask)[i];
  return detail::make_op("dropout", a.shape(), std::move(out), {&a},
                         [mask](const std::vector<double>& g, const Tape::GradSlots& gin) {
                           for (std::size_t i = 0; i < g.size(); ++i)
                             detail::accumulate(gin[0], i, g[i] * (*mask)[i]);
                         });
}

/// Learnable scale/shift plus running statistics for feature normalisation.
struct BatchNormState {
  Tensor gain;
  Tensor bias;
  Tensor running_mean;
  Tensor running_var;
  double epsilon = 1e-5;
  double momentum = 0.1;

  static BatchNormState make(std::size_t features) {
    BatchNormState s;
    s.gain = Tensor::full({features}, 1.0).with_grad();
    s.bias = Tensor::zeros({features}).with_grad();
    s.running_mean = Tensor::zeros({features});
    s.running_var = Tensor::full({features}, 1.0);
    return s;
  }

  std::size_t features() const { return gain.size(); }
};

/// Normalises each column of an r x c batch. Training uses batch statistics
/// (biased variance) and folds them into the running estimates; evaluation
/// uses the running estimates and is deterministic.
inline Tensor batch_norm(const Tensor& x, BatchNormState& state, bool training) {
  detail::require(x.rank() == 2 && x.cols() == state.features(),
                  "batch_norm input " + shape_string(x.shape()) + " vs " +
                      std::to_string(state.features()) + " features");
  const std::size_t r = x.rows(), c = x.cols();
  const double eps = state.epsilon;

  std::vector<double> mean(c, 0.0), var(c, 0.0);
  if (training) {
    detail::require(r >= 2, "batch_norm training on fewer than 2 rows");
    for (std::size_t j = 0; j < c; ++j) {
      for (std::size_t i = 0; i < r; ++i) mean[j] += x.at(i, j);
      mean[j] /= static_cast<double>(r);
      for (std::size_t i = 0; i < r; ++i) {
        const double d = x.at(i, j) - mean[j];
        var[j] += d * d;
      }
      var[j] /= static_cast<double>(r);
    }
    std::vector<double> rm(c), rv(c);
    for (std::size_t j = 0; j < c; ++j) {
      rm[j] = (1.0 - state.momentum) * state.running_mean.at(j) + state.momentum * mean[j];
      rv[j] = (1.0 - state.momentum) * state.running_var.at(j) + state.momentum * var[j];
    }
    state.running_mean = Tensor::vector(std::move(rm));
    state.running_var = Tensor::vector(std::move(rv));
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      mean[j] = state.running_mean.at(j);
      var[j] = state.running_var.at(j);
    }
  }

  auto invstd = std::make_shared<std::vector<double>>(c);
  for (std::size_t j = 0; j < c; ++j) (*invstd)[j] = 1.0 / std::sqrt(var[j] + eps);
  auto xhat = std::make_shared<std::vector<double>>(r * c);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      (*xhat)[i * c + j] = (x.at(i, j) - mean[j]) * (*invstd)[j];
      out[i * c + j] = state.gain.at(j) * (*xhat)[i * c + j] + state.bias.at(j);
    }

  const Tensor gain = state.gain;
  return detail::make_op(
      "batch_norm", {r, c}, std::move(out), {&x, &state.gain, &state.bias},
      [r, c, gain, xhat, invstd, training](const std::vector<double>& g, const Tape::GradSlots& gin) {
        for (std::size_t j = 0; j < c; ++j) {
          double gsum = 0.0, gxsum = 0.0;
          for (std::size_t i = 0; i < r; ++i) {
            gsum += g[i * c + j];
            gxsum += g[i * c + j] * (*xhat)[i * c + j];
          }
          if (gin[1]) (*gin[1])[j] += gxsum;
          if (gin[2]) (*gin[2])[j] += gsum;
          if (!gin[0]) continue;
          const double gamma = gain.at(j);
          if (training) {
            // Batch statistics depend on x, so the mean/variance paths feed back.
            const double n = static_cast<double>(r);
            for (std::size_t i = 0; i < r; ++i) {
              const double dxhat = g[i * c + j] * gamma;
              (*gin[0])[i * c + j] +=
                  (*invstd)[j] * (dxhat - (gamma * gsum + (*xhat)[i * c + j] * gamma * gxsum) / n);
            }
          } else {
            for (std::size_t i = 0; i < r; ++i)
              (*gin[0])[i * c + j] += g[i * c + j] * gamma * (*invstd)[j];
          }
        }
      });
}

/// Normalises each row to zero mean, unit variance, then applies gain/bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double epsilon = 1e-5) {
  detail::require(x.rank() == 2 && gain.rank() == 1 && bias.rank() == 1 &&
                      gain.size() == x.cols() && bias.size() == x.cols(),
                  "layer_norm shapes " + shape_string(x.shape()) + ", " + shape_string(gain.shape()));
  const std::size_t r = x.rows(), c = x.cols();
  auto xhat = std::make_shared<std::vector<double>>(r * c);
  auto invstd = std::make_shared<std::vector<double>>(r);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += x.at(i, j);
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = x.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    (*invstd)[i] = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t j = 0; j < c; ++j) {
      (*xhat)[i * c + j] = (x.at(i, j) - mean) * (*invstd)[i];
      out[i * c + j] = gain.at(j) * (*xhat)[i * c + j] + bias.at(j);
    }
  }
  const Tensor gain_copy = gain;
  return detail::make_op(
      "layer_norm", {r, c}, std::move(out), {&x, &gain, &bias},
      [r, c, gain_copy, xhat, invstd](const std::vector<double>& g, const Tape::GradSlots& gin) {
        for (std::size_t i = 0; i < r; ++i) {
          double dsum = 0.0, dxsum = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            const double dxhat = g[i * c + j] * gain_copy.at(j);
            dsum += dxhat;
            dxsum += dxhat * (*xhat)[i * c + j];
          }
          for (std::size_t j = 0; j < c; ++j) {
            if (gin[1]) (*gin[1])[j] += g[i * c + j] * (*xhat)[i * c + j];
            if (gin[2]) (*gin[2])[j] += g[i * c + j];
            if (gin[0]) {
              const double dxhat = g[i * c + j] * gain_copy.at(j);
              (*gin[0])[i * c + j] +=
                  (*invstd)[i] *
                  (dxhat - (dsum + (*xhat)[i * c + j] * dxsum) / static_cast<double>(c));
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Gradient routing and loss

/// Forward pass takes the values of `hard`; the backward pass pretends the
/// output were `soft`. `hard` must be plain data (no gradient path of its
/// own), as with one-hot draws rounded from a softmax.
inline Tensor straight_through(const Tensor& hard, const Tensor& soft) {
  detail::require(hard.shape() == soft.shape(), "straight_through shape mismatch");
  detail::require(!hard.requires_grad(), "straight_through hard values must be detached");
  std::vector<double> out(hard.values());
  return detail::make_op("straight_through", hard.shape(), std::move(out), {&soft},
                         [](const std::vector<double>& g, const Tape::GradSlots& gin) {
                           for (std::size_t i = 0; i < g.size(); ++i)
                             detail::accumulate(gin[0], i, g[i]);
                         });
}

/// Mean squared error over all entries.
inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  detail::require(pred.shape() == target.shape(),
                  "mse_loss shapes " + shape_string(pred.shape()) + " vs " +
                      shape_string(target.shape()));
  detail::require(pred.size() > 0, "mse_loss on empty tensors");
  const std::size_t n = pred.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred.at(i) - target.at(i);
    total += d * d;
  }
  const Tensor target_copy = target.detached();
  const Tensor pred_copy = pred;
  return detail::make_op(
      "mse_loss", {1}, {total / static_cast<double>(n)}, {&pred},
      [pred_copy, target_copy, n](const std::vector<double>& g, const Tape::GradSlots& gin) {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < n; ++i)
          (*gin[0])[i] += g[0] * 2.0 * (pred_copy.at(i) - target_copy.at(i)) / static_cast<double>(n);
      });
}

/// x w + b with b broadcast over rows.
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowwise(matmul(x, w), b);
}

}  // namespace epicast
