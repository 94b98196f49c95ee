#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "epicast/adam.hpp"
#include "epicast/data.hpp"
#include "epicast/models.hpp"
#include "epicast/rng.hpp"
#include "epicast/tensor.hpp"

namespace epicast {

struct TrainConfig {
  std::size_t max_epochs = 300;
  std::size_t patience = 50;
  std::size_t patience_start_epoch = 100;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& tc) {
  if (tc.max_epochs == 0 || tc.batch_size == 0)
    throw std::invalid_argument("training needs max_epochs >= 1 and batch_size >= 1");
  if (tc.patience_start_epoch > tc.max_epochs)
    throw std::invalid_argument("patience_start_epoch " + std::to_string(tc.patience_start_epoch) +
                                " exceeds max_epochs " + std::to_string(tc.max_epochs));
  if (!(tc.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
}

/// Training produced a non-finite loss; carries the 1-based epoch.
struct TrainingDivergence : std::runtime_error {
  std::size_t epoch;

  explicit TrainingDivergence(std::size_t at)
      : std::runtime_error("training diverged at epoch " + std::to_string(at)), epoch(at) {}
};

/// Stop rule: no strict improvement for `patience` epochs, but never before
/// epoch `start_epoch`. A validation curve that plateaus from epoch P stops
/// training at exactly max(start_epoch, P + patience).
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, std::size_t start_epoch)
      : patience_(patience), start_epoch_(start_epoch) {}

  /// Records one epoch (1-based); true means stop after this epoch.
  bool observe(std::size_t epoch, double validation_loss) {
    if (validation_loss < best_) {
      best_ = validation_loss;
      best_epoch_ = epoch;
    }
    return epoch >= start_epoch_ && epoch - best_epoch_ >= patience_;
  }

  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  std::size_t patience_, start_epoch_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
};

struct TrainResult {
  double best_validation = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::vector<double> training_losses;    // per-epoch mean sample loss, training mode
  std::vector<double> validation_losses;  // per-epoch mean sample loss, eval mode
};

namespace detail {

/// Tensors are immutable value handles, so snapshotting and restoring a
/// model is plain copying, batch-norm running statistics included.
inline std::vector<Tensor> snapshot_params(Forecaster& fc) {
  std::vector<Tensor> out;
  const NamedTensors named = named_tensors(fc);
  for (const auto& [name, t] : named.trainable) out.push_back(*t);
  for (const auto& [name, t] : named.state) out.push_back(*t);
  return out;
}

inline void restore_params(Forecaster& fc, const std::vector<Tensor>& snapshot) {
  const NamedTensors named = named_tensors(fc);
  std::size_t i = 0;
  for (const auto& [name, t] : named.trainable) *t = snapshot[i++];
  for (const auto& [name, t] : named.state) *t = snapshot[i++];
}

inline bool is_nonfinite_signal(const std::exception& e) {
  return std::string(e.what()).find("non-finite") != std::string::npos;
}

}  // namespace detail

/// Minibatch Adam on the mean squared error, validation after every epoch,
/// early stopping per EarlyStopping, and a rewind to the best-validation
/// parameters before returning. Samples are whole-graph examples; the final
/// partial batch is kept.
inline TrainResult train_forecaster(Forecaster& fc, const RegionGraph& graph,
                                    const SupervisedSet& set,
                                    std::span<const std::size_t> train_idx,
                                    std::span<const std::size_t> val_idx, const TrainConfig& tc) {
  validate(tc);
  if (train_idx.empty() || val_idx.empty())
    throw std::invalid_argument("train_forecaster needs nonempty train and validation splits");

  Rng master(tc.seed);
  Rng shuffle_rng = master.substream(1);
  Rng forward_rng = master.substream(2);

  std::vector<AdamState> opt;
  {
    const NamedTensors named = named_tensors(fc);
    opt.resize(named.trainable.size());
    for (AdamState& s : opt) s.learning_rate = tc.learning_rate;
  }

  auto validation_loss = [&]() {
    double total = 0.0;
    for (const std::size_t i : val_idx) {
      const SupervisedSample& s = set.samples[i];
      const Tensor pred = fc.predict(s.windows, graph, false, nullptr);
      total += loss(pred, s.target).item();
    }
    return total / static_cast<double>(val_idx.size());
  };

  EarlyStopping stopper(tc.patience, tc.patience_start_epoch);
  TrainResult result;
  std::vector<Tensor> best_snapshot = detail::snapshot_params(fc);
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train_idx.begin(), train_idx.end());

  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.index(i)]);

    double epoch_total = 0.0;
    try {
      for (std::size_t begin = 0; begin < order.size(); begin += tc.batch_size) {
        const std::size_t end = std::min(begin + tc.batch_size, order.size());
        Tape tape;
        TapeScope scope(tape);
        Tensor batch_loss;
        for (std::size_t k = begin; k < end; ++k) {
          const SupervisedSample& s = set.samples[order[k]];
          const Tensor pred = fc.predict(s.windows, graph, true, &forward_rng);
          const Tensor sample_loss = loss(pred, s.target);
          batch_loss = k == begin ? sample_loss : add(batch_loss, sample_loss);
        }
        epoch_total += batch_loss.item();
        batch_loss = scale(batch_loss, 1.0 / static_cast<double>(end - begin));
        tape.backward(batch_loss);
        const NamedTensors named = named_tensors(fc);
        for (std::size_t p = 0; p < named.trainable.size(); ++p) {
          Tensor& param = *named.trainable[p].second;
          Tensor grad = tape.grad(param);
          param = adam_step(param, grad, opt[p]);
        }
      }
    } catch (const std::runtime_error& e) {
      if (detail::is_nonfinite_signal(e)) throw TrainingDivergence(epoch);
      throw;
    }
    result.training_losses.push_back(epoch_total / static_cast<double>(order.size()));

    double val = 0.0;
    try {
      val = validation_loss();
    } catch (const std::runtime_error& e) {
      if (detail::is_nonfinite_signal(e)) throw TrainingDivergence(epoch);
      throw;
    }
    if (!std::isfinite(val)) throw TrainingDivergence(epoch);
    result.validation_losses.push_back(val);

    if (val < best_val) {
      best_val = val;
      best_snapshot = detail::snapshot_params(fc);
    }
    result.epochs_run = epoch;
    if (stopper.observe(epoch, val)) break;
  }

  detail::restore_params(fc, best_snapshot);
  result.best_validation = stopper.best();
  result.best_epoch = stopper.best_epoch();
  return result;
}

}  // namespace epicast
