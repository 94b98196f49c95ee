#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "epicast/attention.hpp"
#include "epicast/coarsen.hpp"
#include "epicast/graph.hpp"
#include "epicast/lstm.hpp"
#include "epicast/ops.hpp"
#include "epicast/rng.hpp"
#include "epicast/tensor.hpp"

namespace epicast {

enum class ModelKind { kMpnn, kMgnn, kMpnnLstm, kAtmgnn };

inline std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kMpnn: return "MPNN";
    case ModelKind::kMgnn: return "MGNN";
    case ModelKind::kMpnnLstm: return "MPNN_LSTM";
    case ModelKind::kAtmgnn: return "ATMGNN";
  }
  throw std::logic_error("unknown model kind");
}

inline ModelKind model_kind_from(const std::string& name) {
  if (name == "MPNN") return ModelKind::kMpnn;
  if (name == "MGNN") return ModelKind::kMgnn;
  if (name == "MPNN_LSTM") return ModelKind::kMpnnLstm;
  if (name == "ATMGNN") return ModelKind::kAtmgnn;
  throw std::invalid_argument("unknown model kind '" + name + "'");
}

inline bool is_temporal(ModelKind kind) {
  return kind == ModelKind::kMpnnLstm || kind == ModelKind::kAtmgnn;
}

inline bool is_multiresolution(ModelKind kind) {
  return kind == ModelKind::kMgnn || kind == ModelKind::kAtmgnn;
}

/// Architecture and training-relevant hyperparameters of one forecaster.
/// `features` is the per-node input width (case window plus any static
/// feature block); `context` is how many consecutive windows the temporal
/// kinds consume.
struct ModelConfig {
  ModelKind kind = ModelKind::kMpnn;
  std::size_t hidden = 64;
  std::size_t mp_layers = 2;
  std::size_t window = 7;
  std::size_t horizon = 1;
  std::size_t context = 7;
  std::size_t features = 7;
  std::vector<std::size_t> cluster_sizes;
  std::size_t heads = 1;
  double dropout = 0.5;
  std::uint64_t seed = 0;
  bool graph_level_readout = false;

  std::size_t embedding_dim() const { return hidden * mp_layers; }
};

inline void validate(const ModelConfig& c) {
  if (c.horizon == 0) throw std::invalid_argument("model horizon must be at least 1");
  if (c.hidden == 0 || c.mp_layers == 0) throw std::invalid_argument("model needs hidden > 0 and layers > 0");
  if (c.window == 0 || c.features < c.window)
    throw std::invalid_argument("feature width cannot be smaller than the case window");
  if (is_multiresolution(c.kind) == c.cluster_sizes.empty())
    throw std::invalid_argument(to_string(c.kind) + (c.cluster_sizes.empty()
                                    ? " requires cluster sizes"
                                    : " does not take cluster sizes"));
  if (c.dropout < 0.0 || c.dropout >= 1.0) throw std::invalid_argument("dropout rate outside [0,1)");
  if (is_temporal(c.kind) && c.context == 0)
    throw std::invalid_argument("temporal models need context >= 1");
  if (c.kind == ModelKind::kAtmgnn && c.embedding_dim() % std::max<std::size_t>(c.heads, 1) != 0)
    throw std::invalid_argument("embedding width must divide into attention heads");
}

/// Per-region features for one reference day: row u holds region u's case
/// counts over the last `window` days, optionally extended with static
/// columns.
struct NodeFeatureWindow {
  Tensor x;
  std::size_t t = 0;
  std::size_t window = 0;
};

/// Clamped, finite per-region forecast ready for emission.
struct Prediction {
  std::vector<double> values;
};

inline Prediction to_prediction(const Tensor& raw) {
  Prediction p;
  p.values.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) p.values.push_back(raw.at(i) < 0.0 ? 0.0 : raw.at(i));
  return p;
}

// ---------------------------------------------------------------------------
// Shared building blocks

struct LinearReadout {
  Tensor weight;  // f x 1
  Tensor bias;    // 1

  static LinearReadout init(std::size_t in_dim, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    return {Tensor::uniform({in_dim, 1}, -bound, bound, rng).with_grad(),
            Tensor::zeros({1}).with_grad()};
  }

  Tensor apply(const Tensor& h) const {
    return add_rowwise(matmul(h, weight), bias).reshaped({h.rows()});
  }
};

/// relu(A_norm H W), then batch normalisation and dropout.
inline Tensor mpnn_layer(const Tensor& h, const Tensor& a_norm, const Tensor& w,
                         BatchNormState& norm, double dropout_rate, bool training, Rng* rng) {
  const Tensor activated = relu(matmul(matmul(a_norm, h), w));
  return dropout(batch_norm(activated, norm, training), dropout_rate, training, rng);
}

/// K message-passing layers with skip-concatenation: the output carries every
/// layer's embedding, n x (K*hidden).
struct MpnnEncoderParams {
  std::vector<Tensor> weights;
  std::vector<BatchNormState> norms;

  static MpnnEncoderParams init(std::size_t features, std::size_t hidden, std::size_t layers,
                                Rng& rng) {
    MpnnEncoderParams e;
    std::size_t in = features;
    for (std::size_t k = 0; k < layers; ++k) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      e.weights.push_back(Tensor::uniform({in, hidden}, -bound, bound, rng).with_grad());
      e.norms.push_back(BatchNormState::make(hidden));
      in = hidden;
    }
    return e;
  }
};

inline Tensor encode_mpnn(const Tensor& x, const Tensor& a_norm, MpnnEncoderParams& encoder,
                          double dropout_rate, bool training, Rng* rng) {
  std::vector<Tensor> skips;
  Tensor h = x;
  for (std::size_t k = 0; k < encoder.weights.size(); ++k) {
    h = mpnn_layer(h, a_norm, encoder.weights[k], encoder.norms[k], dropout_rate, training, rng);
    skips.push_back(h);
  }
  return skips.size() == 1 ? skips.front() : hcat(skips);
}

// ---------------------------------------------------------------------------
// MPNN

struct MpnnModel {
  MpnnEncoderParams encoder;
  LinearReadout readout;
};

inline Tensor mpnn_forward(const NodeFeatureWindow& window, const RegionGraph& graph,
                           MpnnModel& m, const ModelConfig& c, bool training, Rng* rng) {
  const Tensor h = encode_mpnn(window.x, graph.propagation, m.encoder, c.dropout, training, rng);
  return m.readout.apply(h);
}

// ---------------------------------------------------------------------------
// MPNN + LSTM

struct MpnnLstmModel {
  MpnnEncoderParams encoder;
  LstmStack lstm;
  LinearReadout readout;
};

/// Encodes each day's window with the shared MPNN, runs the per-region
/// embedding sequences through one shared LSTM (regions batched), and reads
/// the final hidden state out per region. The graph-level variant pools the
/// embeddings to one token per day and broadcasts the sequence encoding back
/// over regions.
inline Tensor mpnn_lstm_forward(std::span<const NodeFeatureWindow> windows, const RegionGraph& graph,
                                MpnnLstmModel& m, const ModelConfig& c, bool training, Rng* rng) {
  if (windows.empty()) throw std::invalid_argument("mpnn_lstm_forward needs at least one window");
  const std::size_t n = windows.front().x.rows();
  std::vector<Tensor> encoded;
  encoded.reserve(windows.size());
  for (const NodeFeatureWindow& w : windows) {
    if (w.x.rows() != n)
      throw std::invalid_argument("windows disagree on region count: " + std::to_string(w.x.rows()) +
                                  " vs " + std::to_string(n));
    Tensor h = encode_mpnn(w.x, graph.propagation, m.encoder, c.dropout, training, rng);
    if (c.graph_level_readout) h = mean_rows(h).reshaped({1, c.embedding_dim()});
    encoded.push_back(std::move(h));
  }
  const std::vector<Tensor> outputs = lstm_sequence(encoded, m.lstm);
  Tensor last = outputs.back();
  if (c.graph_level_readout) {
    const Tensor pooled = last.reshaped({m.lstm.output_dim()});
    last = broadcast_rows(pooled, n);
  }
  return m.readout.apply(last);
}

// ---------------------------------------------------------------------------
// MGNN

struct MgnnLevelParams {
  Tensor assign_weight;       // f x k, produces cluster logits
  Tensor mix_weight;          // f x f, message passing on the coarse graph
  BatchNormState norm;
};

struct MgnnModel {
  MpnnEncoderParams encoder;
  std::vector<MgnnLevelParams> levels;
  LinearReadout readout;
};

struct MgnnEncoding {
  Tensor finest;                // n x f node embeddings
  std::vector<Tensor> latents;  // one f-vector per resolution, finest first
};

namespace detail {

/// Coarsens the encoded graph level by level and mean-pools a latent per
/// resolution. `soft_assignment` pools with the softmax probabilities
/// instead of sampled one-hot rows, turning the whole encoding into a
/// smooth function of the parameters; the hard path's straight-through
/// surrogate is invisible to finite differences, so gradient checks run in
/// this mode.
inline MgnnEncoding mgnn_encode(const NodeFeatureWindow& window, const RegionGraph& graph,
                                MpnnEncoderParams& encoder, std::vector<MgnnLevelParams>& levels,
                                const ModelConfig& c, bool training, Rng* rng,
                                bool soft_assignment) {
  MgnnEncoding enc;
  enc.finest = encode_mpnn(window.x, graph.propagation, encoder, c.dropout, training, rng);
  enc.latents.push_back(mean_rows(enc.finest));

  auto logits_fn = [&](std::size_t level, const Tensor& adj, const Tensor& emb, std::size_t) {
    return matmul(matmul(normalize_propagation(adj), emb), levels[level].assign_weight);
  };
  const CoarseningHierarchy hierarchy = build_hierarchy(graph.adjacency, enc.finest,
                                                        c.cluster_sizes, logits_fn, rng,
                                                        !soft_assignment);

  for (std::size_t level = 1; level < hierarchy.depth(); ++level) {
    MgnnLevelParams& lp = levels[level - 1];
    const CoarseningLevel& cl = hierarchy.levels[level];
    const Tensor mixed = relu(matmul(
        matmul(normalize_propagation(cl.adjacency), cl.embeddings), lp.mix_weight));
    const Tensor normed =
        dropout(batch_norm(mixed, lp.norm, training), c.dropout, training, rng);
    enc.latents.push_back(mean_rows(normed));
  }
  return enc;
}

inline Tensor readout_with_latents(const MgnnEncoding& enc, const LinearReadout& readout) {
  const std::size_t n = enc.finest.rows();
  std::vector<Tensor> parts{enc.finest};
  for (const Tensor& latent : enc.latents) parts.push_back(broadcast_rows(latent, n));
  return readout.apply(hcat(parts));
}

}  // namespace detail

struct MgnnOutput {
  Tensor prediction;
  std::vector<Tensor> latents;
};

inline MgnnOutput mgnn_forward(const NodeFeatureWindow& window, const RegionGraph& graph,
                               MgnnModel& m, const ModelConfig& c, bool training, Rng* rng,
                               bool soft_assignment = false) {
  const MgnnEncoding enc =
      detail::mgnn_encode(window, graph, m.encoder, m.levels, c, training, rng, soft_assignment);
  return {detail::readout_with_latents(enc, m.readout), enc.latents};
}

// ---------------------------------------------------------------------------
// ATMGNN

struct AtmgnnModel {
  MpnnEncoderParams encoder;
  std::vector<MgnnLevelParams> levels;
  EncoderLayerParams set_encoder;       // over the hierarchy of latents, unordered
  EncoderLayerParams temporal_encoder;  // over timesteps, positional
  LinearReadout readout;
};

/// Per day: multiresolution encoding -> transformer over the latent set
/// (no positions; resolutions are unordered) -> mean token. The day-token
/// sequence then passes the positional transformer; its last output is
/// broadcast to regions and joined with the final day's node embeddings.
inline Tensor atmgnn_forward(std::span<const NodeFeatureWindow> windows, const RegionGraph& graph,
                             AtmgnnModel& m, const ModelConfig& c, bool training, Rng* rng,
                             bool soft_assignment = false) {
  if (windows.empty()) throw std::invalid_argument("atmgnn_forward needs at least one window");
  std::vector<Tensor> day_tokens;
  Tensor last_finest;
  for (const NodeFeatureWindow& w : windows) {
    const MgnnEncoding enc =
        detail::mgnn_encode(w, graph, m.encoder, m.levels, c, training, rng, soft_assignment);
    std::vector<Tensor> latent_rows;
    latent_rows.reserve(enc.latents.size());
    for (const Tensor& latent : enc.latents)
      latent_rows.push_back(latent.reshaped({1, c.embedding_dim()}));
    const Tensor set_tokens = latent_rows.size() == 1
                                  ? latent_rows.front()
                                  : vcat(std::span<const Tensor>(latent_rows));
    const Tensor set_encoded = transformer_encode(set_tokens, m.set_encoder, false);
    day_tokens.push_back(mean_rows(set_encoded).reshaped({1, c.embedding_dim()}));
    last_finest = enc.finest;
  }

  const Tensor sequence = day_tokens.size() == 1
                              ? day_tokens.front()
                              : vcat(std::span<const Tensor>(day_tokens));
  const Tensor temporal = transformer_encode(sequence, m.temporal_encoder, true);
  const Tensor summary = row(temporal, temporal.rows() - 1);
  const Tensor joined = hcat(last_finest, broadcast_rows(summary, last_finest.rows()));
  return m.readout.apply(joined);
}

// ---------------------------------------------------------------------------
// Loss and the model facade

/// Training objective for every architecture: mean squared error.
inline Tensor loss(const Tensor& prediction, const Tensor& target) {
  return mse_loss(prediction, target);
}

/// One configured model of any kind, plus enumeration of its parameters for
/// optimisation and checkpointing.
struct Forecaster {
  ModelConfig config;
  std::variant<MpnnModel, MpnnLstmModel, MgnnModel, AtmgnnModel> model;

  Tensor predict(std::span<const NodeFeatureWindow> windows, const RegionGraph& graph,
                 bool training, Rng* rng, bool soft_assignment = false) {
    if (windows.empty()) throw std::invalid_argument("predict with no input windows");
    switch (config.kind) {
      case ModelKind::kMpnn:
        return mpnn_forward(windows.back(), graph, std::get<MpnnModel>(model), config, training,
                            rng);
      case ModelKind::kMpnnLstm:
        return mpnn_lstm_forward(windows, graph, std::get<MpnnLstmModel>(model), config, training,
                                 rng);
      case ModelKind::kMgnn:
        return mgnn_forward(windows.back(), graph, std::get<MgnnModel>(model), config, training,
                            rng, soft_assignment)
            .prediction;
      case ModelKind::kAtmgnn:
        return atmgnn_forward(windows, graph, std::get<AtmgnnModel>(model), config, training, rng,
                              soft_assignment);
    }
    throw std::logic_error("unknown model kind");
  }
};

inline std::vector<MgnnLevelParams> init_levels(const ModelConfig& c, Rng& rng) {
  std::vector<MgnnLevelParams> levels;
  const std::size_t f = c.embedding_dim();
  const double bound = 1.0 / std::sqrt(static_cast<double>(f));
  for (std::size_t k : c.cluster_sizes) {
    MgnnLevelParams lp;
    lp.assign_weight = Tensor::uniform({f, k}, -bound, bound, rng).with_grad();
    lp.mix_weight = Tensor::uniform({f, f}, -bound, bound, rng).with_grad();
    lp.norm = BatchNormState::make(f);
    levels.push_back(std::move(lp));
  }
  return levels;
}

inline Forecaster make_forecaster(const ModelConfig& config) {
  validate(config);
  Rng rng(config.seed);
  const std::size_t f = config.embedding_dim();
  Forecaster fc;
  fc.config = config;
  switch (config.kind) {
    case ModelKind::kMpnn: {
      MpnnModel m;
      m.encoder = MpnnEncoderParams::init(config.features, config.hidden, config.mp_layers, rng);
      m.readout = LinearReadout::init(f, rng);
      fc.model = std::move(m);
      break;
    }
    case ModelKind::kMpnnLstm: {
      MpnnLstmModel m;
      m.encoder = MpnnEncoderParams::init(config.features, config.hidden, config.mp_layers, rng);
      m.lstm = LstmStack::init(f, config.hidden, 1, false, rng);
      m.readout = LinearReadout::init(config.hidden, rng);
      fc.model = std::move(m);
      break;
    }
    case ModelKind::kMgnn: {
      MgnnModel m;
      m.encoder = MpnnEncoderParams::init(config.features, config.hidden, config.mp_layers, rng);
      m.levels = init_levels(config, rng);
      m.readout = LinearReadout::init(f * (2 + config.cluster_sizes.size()), rng);
      fc.model = std::move(m);
      break;
    }
    case ModelKind::kAtmgnn: {
      AtmgnnModel m;
      m.encoder = MpnnEncoderParams::init(config.features, config.hidden, config.mp_layers, rng);
      m.levels = init_levels(config, rng);
      m.set_encoder = EncoderLayerParams::init(f, config.heads, 2 * f, rng);
      m.temporal_encoder = EncoderLayerParams::init(f, config.heads, 2 * f, rng);
      m.readout = LinearReadout::init(2 * f, rng);
      fc.model = std::move(m);
      break;
    }
  }
  return fc;
}

// ---------------------------------------------------------------------------
// Parameter enumeration (training and serialization walk the same names)

using ParamMap = std::vector<std::pair<std::string, Tensor*>>;

namespace detail {

inline void collect_encoder(MpnnEncoderParams& e, ParamMap& trainable, ParamMap& state,
                            const std::string& prefix) {
  for (std::size_t k = 0; k < e.weights.size(); ++k) {
    const std::string base = prefix + "." + std::to_string(k);
    trainable.push_back({base + ".weight", &e.weights[k]});
    trainable.push_back({base + ".norm.gain", &e.norms[k].gain});
    trainable.push_back({base + ".norm.bias", &e.norms[k].bias});
    state.push_back({base + ".norm.running_mean", &e.norms[k].running_mean});
    state.push_back({base + ".norm.running_var", &e.norms[k].running_var});
  }
}

inline void collect_lstm(LstmParams& p, ParamMap& trainable, const std::string& prefix) {
  trainable.push_back({prefix + ".w_forget", &p.w_forget});
  trainable.push_back({prefix + ".w_input", &p.w_input});
  trainable.push_back({prefix + ".w_output", &p.w_output});
  trainable.push_back({prefix + ".w_cell", &p.w_cell});
  trainable.push_back({prefix + ".u_forget", &p.u_forget});
  trainable.push_back({prefix + ".u_input", &p.u_input});
  trainable.push_back({prefix + ".u_output", &p.u_output});
  trainable.push_back({prefix + ".u_cell", &p.u_cell});
  trainable.push_back({prefix + ".b_forget", &p.b_forget});
  trainable.push_back({prefix + ".b_input", &p.b_input});
  trainable.push_back({prefix + ".b_output", &p.b_output});
  trainable.push_back({prefix + ".b_cell", &p.b_cell});
}

inline void collect_levels(std::vector<MgnnLevelParams>& levels, ParamMap& trainable,
                           ParamMap& state) {
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const std::string base = "level." + std::to_string(l);
    trainable.push_back({base + ".assign", &levels[l].assign_weight});
    trainable.push_back({base + ".mix", &levels[l].mix_weight});
    trainable.push_back({base + ".norm.gain", &levels[l].norm.gain});
    trainable.push_back({base + ".norm.bias", &levels[l].norm.bias});
    state.push_back({base + ".norm.running_mean", &levels[l].norm.running_mean});
    state.push_back({base + ".norm.running_var", &levels[l].norm.running_var});
  }
}

inline void collect_encoder_layer(EncoderLayerParams& p, ParamMap& trainable,
                                  const std::string& prefix) {
  for (std::size_t h = 0; h < p.attention.heads.size(); ++h) {
    const std::string base = prefix + ".head." + std::to_string(h);
    trainable.push_back({base + ".w_query", &p.attention.heads[h].w_query});
    trainable.push_back({base + ".w_key", &p.attention.heads[h].w_key});
    trainable.push_back({base + ".w_value", &p.attention.heads[h].w_value});
  }
  trainable.push_back({prefix + ".w_out", &p.attention.w_out});
  trainable.push_back({prefix + ".norm1.gain", &p.norm1_gain});
  trainable.push_back({prefix + ".norm1.bias", &p.norm1_bias});
  trainable.push_back({prefix + ".norm2.gain", &p.norm2_gain});
  trainable.push_back({prefix + ".norm2.bias", &p.norm2_bias});
  trainable.push_back({prefix + ".ff.w1", &p.ff_w1});
  trainable.push_back({prefix + ".ff.b1", &p.ff_b1});
  trainable.push_back({prefix + ".ff.w2", &p.ff_w2});
  trainable.push_back({prefix + ".ff.b2", &p.ff_b2});
}

inline void collect_readout(LinearReadout& r, ParamMap& trainable) {
  trainable.push_back({"readout.weight", &r.weight});
  trainable.push_back({"readout.bias", &r.bias});
}

}  // namespace detail

struct NamedTensors {
  ParamMap trainable;
  ParamMap state;
};

inline NamedTensors named_tensors(Forecaster& fc) {
  NamedTensors out;
  std::visit(
      [&](auto& m) {
        using M = std::decay_t<decltype(m)>;
        detail::collect_encoder(m.encoder, out.trainable, out.state, "encoder");
        if constexpr (std::is_same_v<M, MpnnLstmModel>) {
          for (std::size_t l = 0; l < m.lstm.forward.size(); ++l)
            detail::collect_lstm(m.lstm.forward[l], out.trainable, "lstm." + std::to_string(l));
          for (std::size_t l = 0; l < m.lstm.backward.size(); ++l)
            detail::collect_lstm(m.lstm.backward[l], out.trainable,
                                 "lstm_rev." + std::to_string(l));
        }
        if constexpr (std::is_same_v<M, MgnnModel> || std::is_same_v<M, AtmgnnModel>) {
          detail::collect_levels(m.levels, out.trainable, out.state);
        }
        if constexpr (std::is_same_v<M, AtmgnnModel>) {
          detail::collect_encoder_layer(m.set_encoder, out.trainable, "set");
          detail::collect_encoder_layer(m.temporal_encoder, out.trainable, "temporal");
        }
        detail::collect_readout(m.readout, out.trainable);
      },
      fc.model);
  return out;
}

}  // namespace epicast
