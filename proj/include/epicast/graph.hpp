#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "epicast/ops.hpp"
#include "epicast/tensor.hpp"

namespace epicast {

/// Administrative regions and how they touch. The adjacency carries weight 1
/// on the diagonal (every region sees itself), weight 2 between regions that
/// share a border, and 0 elsewhere; `propagation` is its symmetric
/// degree-normalised form used by the message-passing layers.
struct RegionGraph {
  std::size_t n = 0;
  std::vector<std::string> labels;
  Tensor adjacency;
  Tensor propagation;
};

/// D^(-1/2) A D^(-1/2) with D = diag(row sums). Rejects rows with
/// non-positive mass; graphs with self-loops never trigger that.
inline Tensor normalize_adjacency(const Tensor& a) {
  if (a.rank() != 2 || a.rows() != a.cols())
    throw std::invalid_argument("normalize_adjacency needs a square matrix, got " +
                                shape_string(a.shape()));
  const std::size_t n = a.rows();
  std::vector<double> invsqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double degree = 0.0;
    for (std::size_t j = 0; j < n; ++j) degree += a.at(i, j);
    if (degree <= 0.0)
      throw std::invalid_argument("normalize_adjacency: node " + std::to_string(i) +
                                  " has zero degree");
    invsqrt[i] = 1.0 / std::sqrt(degree);
  }
  std::vector<double> out(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = invsqrt[i] * a.at(i, j) * invsqrt[j];
  return Tensor::matrix(n, n, std::move(out));
}

/// Differentiable variant for learned coarse graphs: isolated nodes get zero
/// rows instead of an error, and gradients flow through the degrees.
inline Tensor normalize_propagation(const Tensor& a) {
  if (a.rank() != 2 || a.rows() != a.cols())
    throw std::invalid_argument("normalize_propagation needs a square matrix, got " +
                                shape_string(a.shape()));
  const std::size_t n = a.rows();
  const Tensor ones = Tensor::full({n, 1}, 1.0);
  const Tensor degrees = matmul(a, ones).reshaped({n});
  const Tensor invsqrt = rsqrt_or_zero(degrees);
  const Tensor outer = matmul(invsqrt.reshaped({n, 1}), invsqrt.reshaped({1, n}));
  return hadamard(a, outer);
}

inline RegionGraph build_adjacency(std::size_t n,
                                   std::span<const std::pair<std::size_t, std::size_t>> border_pairs,
                                   std::vector<std::string> labels = {}) {
  if (n == 0) throw std::invalid_argument("build_adjacency with zero regions");
  if (!labels.empty() && labels.size() != n)
    throw std::invalid_argument("build_adjacency label count does not match region count");
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] = 1.0;
  for (const auto& [u, v] : border_pairs) {
    if (u >= n || v >= n)
      throw std::invalid_argument("build_adjacency border pair (" + std::to_string(u) + "," +
                                  std::to_string(v) + ") out of range");
    if (u == v)
      throw std::invalid_argument("build_adjacency self-border on region " + std::to_string(u));
    a[u * n + v] = 2.0;
    a[v * n + u] = 2.0;
  }
  RegionGraph g;
  g.n = n;
  g.labels = std::move(labels);
  g.adjacency = Tensor::matrix(n, n, std::move(a));
  g.propagation = normalize_adjacency(g.adjacency);
  return g;
}

/// Hard grouping of n nodes into k clusters.
struct Partition {
  std::size_t clusters = 0;
  std::vector<std::size_t> assignment;

  std::size_t nodes() const { return assignment.size(); }
};

inline void validate_partition(const Partition& p, std::size_t n) {
  if (p.nodes() != n)
    throw std::invalid_argument("partition covers " + std::to_string(p.nodes()) + " nodes, graph has " +
                                std::to_string(n));
  if (p.clusters == 0) throw std::invalid_argument("partition with zero clusters");
  for (std::size_t c : p.assignment)
    if (c >= p.clusters)
      throw std::invalid_argument("partition assigns cluster " + std::to_string(c) + " of " +
                                  std::to_string(p.clusters));
}

/// n x k one-hot matrix view of a partition.
inline Tensor partition_matrix(const Partition& p) {
  const std::size_t n = p.nodes(), k = p.clusters;
  validate_partition(p, n);
  std::vector<double> m(n * k, 0.0);
  for (std::size_t u = 0; u < n; ++u) m[u * k + p.assignment[u]] = 1.0;
  return Tensor::matrix(n, k, std::move(m));
}

/// Cluster-level adjacency with the halved diagonal: entry (i,i) is half the
/// total weight inside cluster i (each undirected edge counted once), entry
/// (i,j) the total weight between clusters i and j. Note the matrix form
/// PᵀAP produces twice this diagonal; off-diagonals agree exactly.
inline Tensor coarsen_adjacency(const Tensor& a, const Partition& p) {
  if (a.rank() != 2 || a.rows() != a.cols())
    throw std::invalid_argument("coarsen_adjacency needs a square matrix");
  const std::size_t n = a.rows(), k = p.clusters;
  validate_partition(p, n);
  std::vector<double> coarse(k * k, 0.0);
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v < n; ++v) {
      const std::size_t i = p.assignment[u], j = p.assignment[v];
      coarse[i * k + j] += (i == j ? 0.5 : 1.0) * a.at(u, v);
    }
  return Tensor::matrix(k, k, std::move(coarse));
}

}  // namespace epicast
