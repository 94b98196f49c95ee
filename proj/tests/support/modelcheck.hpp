#pragma once

// End-to-end model checks shared by the unit tests and the acceptance gate:
// a finite-difference pass over every trainable parameter of a configured
// forecaster, and a region-permutation probe. Differencing runs with soft
// cluster assignments: hard sampling is a step function of the logits, so
// only the smooth relaxation can be compared against finite differences.
// The straight-through surrogate is exercised by separate loss-decrease
// tests.

#include <cstdint>
#include <utility>
#include <vector>

#include "epicast/graph.hpp"
#include "epicast/models.hpp"
#include "epicast/ops.hpp"
#include "epicast/rng.hpp"
#include "support/oracles.hpp"

namespace modelcheck {

using epicast::ModelConfig;
using epicast::NodeFeatureWindow;
using epicast::RegionGraph;
using epicast::Tensor;

struct Micro {
  RegionGraph graph;
  std::vector<NodeFeatureWindow> windows;
  Tensor target;
};

/// 4 regions in a ring, 3-day windows over 3 timesteps, random targets.
inline Micro micro_fixture(std::uint64_t seed, std::size_t features, std::size_t steps) {
  Micro m;
  const std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 1}, {1, 2}, {2, 3}, {3, 0}};
  m.graph = epicast::build_adjacency(4, pairs);
  epicast::Rng rng(seed);
  for (std::size_t t = 0; t < steps; ++t)
    m.windows.push_back({Tensor::uniform({4, features}, 0.0, 1.0, rng), t, features});
  m.target = Tensor::uniform({4}, 0.0, 1.0, rng);
  return m;
}

/// Finite differences over every trainable tensor of the configured model,
/// training-mode forward (batch norm on batch statistics, dropout active,
/// fixed mask stream, soft assignments), MSE loss against fixed targets.
/// The step is wider than the per-op checks use: through a whole model the
/// central-difference cancellation noise on zero-gradient parameters
/// (eps * |loss| / step) has to stay below the comparison floor.
inline double model_grad_check(const ModelConfig& config, const Micro& fixture) {
  using epicast::Forecaster;
  Forecaster probe = epicast::make_forecaster(config);
  const std::size_t param_count = epicast::named_tensors(probe).trainable.size();

  auto loss_fn = [&](const std::vector<Tensor>& params) {
    Forecaster fc = epicast::make_forecaster(config);
    const auto named = epicast::named_tensors(fc);
    for (std::size_t i = 0; i < params.size(); ++i) *named.trainable[i].second = params[i];
    epicast::Rng forward_rng(1234);
    const Tensor pred = fc.predict(fixture.windows, fixture.graph, true, &forward_rng, true);
    return epicast::loss(pred, fixture.target);
  };

  std::vector<Tensor> initial;
  {
    const auto named = epicast::named_tensors(probe);
    for (std::size_t i = 0; i < param_count; ++i) initial.push_back(*named.trainable[i].second);
  }
  return oracle::grad_check(loss_fn, std::move(initial), 1e-4).max_rel_err;
}

/// Evaluation-mode forward on a graph, then on the same graph with nodes
/// relabeled; returns the largest deviation between the permuted prediction
/// and the prediction of the permuted problem.
inline double equivariance_gap(const ModelConfig& config, std::size_t n,
                               const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                               const std::vector<std::size_t>& pi, std::uint64_t data_seed) {
  using epicast::Forecaster;
  const RegionGraph g = epicast::build_adjacency(n, pairs);
  std::vector<std::pair<std::size_t, std::size_t>> mapped;
  mapped.reserve(pairs.size());
  for (const auto& [u, v] : pairs) mapped.push_back({pi[u], pi[v]});
  const RegionGraph gp = epicast::build_adjacency(n, mapped);

  epicast::Rng rng(data_seed);
  const std::size_t steps = epicast::is_temporal(config.kind) ? config.context : 1;
  std::vector<NodeFeatureWindow> windows, permuted;
  for (std::size_t t = 0; t < steps; ++t) {
    const Tensor x = Tensor::uniform({n, config.features}, 0.0, 2.0, rng);
    std::vector<double> shuffled(n * config.features);
    for (std::size_t u = 0; u < n; ++u)
      for (std::size_t j = 0; j < config.features; ++j)
        shuffled[pi[u] * config.features + j] = x.at(u, j);
    windows.push_back({x, t, config.window});
    permuted.push_back({Tensor::wrap({n, config.features}, std::move(shuffled)), t, config.window});
  }

  Forecaster fc = epicast::make_forecaster(config);
  const Tensor base = fc.predict(windows, g, false, nullptr);
  const Tensor moved = fc.predict(permuted, gp, false, nullptr);
  double gap = 0.0;
  for (std::size_t u = 0; u < n; ++u)
    gap = std::max(gap, std::abs(moved.at(pi[u]) - base.at(u)));
  return gap;
}

}  // namespace modelcheck
