#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "epicast/graph.hpp"
#include "epicast/ops.hpp"
#include "epicast/rng.hpp"
#include "epicast/tensor.hpp"

namespace epicast {

/// Draws a hard one-hot cluster assignment per row. With a generator, each
/// row takes argmax(logits + Gumbel noise), which samples the softmax
/// distribution; without one (evaluation), plain argmax. Gradients flow to
/// the logits through the softmax probabilities via the straight-through
/// path. `hard=false` returns the probabilities themselves.
inline Tensor sample_assignment(const Tensor& logits, Rng* rng, bool hard = true) {
  if (logits.rank() != 2 || logits.cols() == 0)
    throw std::invalid_argument("sample_assignment logits of shape " + shape_string(logits.shape()));
  const Tensor soft = softmax(logits);
  if (!hard) return soft;
  const std::size_t n = logits.rows(), k = logits.cols();
  std::vector<double> onehot(n * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_key = -1.0 / 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double key = logits.at(i, j) + (rng ? rng->gumbel() : 0.0);
      if (key > best_key) {
        best_key = key;
        best = j;
      }
    }
    onehot[i * k + best] = 1.0;
  }
  return straight_through(Tensor::matrix(n, k, std::move(onehot)), soft);
}

/// Reads a hard assignment matrix back into index form.
inline Partition assignment_partition(const Tensor& p) {
  Partition part;
  part.clusters = p.cols();
  part.assignment.resize(p.rows());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    std::size_t hot = p.cols();
    for (std::size_t j = 0; j < p.cols(); ++j) {
      const double v = p.at(i, j);
      if (v == 1.0 && hot == p.cols())
        hot = j;
      else if (v != 0.0)
        throw std::invalid_argument("assignment row " + std::to_string(i) + " is not one-hot");
    }
    if (hot == p.cols())
      throw std::invalid_argument("assignment row " + std::to_string(i) + " is not one-hot");
    part.assignment[i] = hot;
  }
  return part;
}

/// PᵀAP. Diagonal counts every within-cluster edge twice (the congruence
/// convention); differentiable through P's straight-through path. `hard`
/// asserts one-hot rows; pass false for a soft assignment, where rows are
/// arbitrary cluster weights.
inline Tensor coarsen_with_assignment(const Tensor& a, const Tensor& p, bool hard = true) {
  if (a.rank() != 2 || a.rows() != a.cols() || p.rank() != 2 || p.rows() != a.rows())
    throw std::invalid_argument("coarsen_with_assignment shapes " + shape_string(a.shape()) +
                                ", " + shape_string(p.shape()));
  if (hard) assignment_partition(p);  // validates one-hot rows
  return matmul(transpose(p), matmul(a, p));
}

/// One resolution level: the (coarse) adjacency, node embeddings pooled onto
/// it, and the assignment that produced it (empty at the finest level).
struct CoarseningLevel {
  Tensor adjacency;
  Tensor embeddings;
  Tensor assignment;
};

struct CoarseningHierarchy {
  std::vector<CoarseningLevel> levels;  // levels[0] is the input graph

  std::size_t depth() const { return levels.size(); }
};

/// Produces per-level cluster logits from the current graph and embeddings.
using AssignmentLogitsFn = std::function<Tensor(std::size_t level, const Tensor& adjacency,
                                                const Tensor& embeddings, std::size_t clusters)>;

/// Repeatedly clusters the graph down the given sizes. Each step samples a
/// hard assignment from the strategy's logits, pools the adjacency as PᵀAP
/// and the embeddings as PᵀH. Empty clusters are legal; they surface as
/// zero rows. Passing no generator makes the assignments deterministic
/// argmaxes for evaluation. `hard=false` swaps the sampled one-hot rows for
/// the softmax probabilities themselves: every pooling step becomes smooth,
/// which is what a finite-difference pass over the model needs.
inline CoarseningHierarchy build_hierarchy(const Tensor& adjacency, const Tensor& embeddings,
                                           std::span<const std::size_t> cluster_sizes,
                                           const AssignmentLogitsFn& logits_fn, Rng* rng,
                                           bool hard = true) {
  if (adjacency.rank() != 2 || adjacency.rows() != adjacency.cols())
    throw std::invalid_argument("build_hierarchy needs a square adjacency");
  if (embeddings.rank() != 2 || embeddings.rows() != adjacency.rows())
    throw std::invalid_argument("build_hierarchy embeddings of shape " +
                                shape_string(embeddings.shape()) + " for " +
                                std::to_string(adjacency.rows()) + " nodes");
  CoarseningHierarchy h;
  h.levels.push_back({adjacency, embeddings, Tensor()});
  std::size_t current = adjacency.rows();
  for (std::size_t level = 0; level < cluster_sizes.size(); ++level) {
    const std::size_t k = cluster_sizes[level];
    if (k == 0 || k > current)
      throw std::invalid_argument("cluster size " + std::to_string(k) + " invalid at level with " +
                                  std::to_string(current) + " nodes");
    const CoarseningLevel& prev = h.levels.back();
    const Tensor logits = logits_fn(level, prev.adjacency, prev.embeddings, k);
    if (logits.rank() != 2 || logits.rows() != current || logits.cols() != k)
      throw std::invalid_argument("assignment logits of shape " + shape_string(logits.shape()) +
                                  " for level expecting " + std::to_string(current) + "x" +
                                  std::to_string(k));
    const Tensor p = sample_assignment(logits, rng, hard);
    CoarseningLevel next;
    next.assignment = p;
    next.adjacency = coarsen_with_assignment(prev.adjacency, p, hard);
    next.embeddings = matmul(transpose(p), prev.embeddings);
    h.levels.push_back(std::move(next));
    current = k;
  }
  return h;
}

}  // namespace epicast
