#pragma once

#include <cstddef>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "epicast/models.hpp"
#include "epicast/tensor.hpp"

namespace epicast {

/// Training provenance stored alongside the weights.
struct CheckpointMeta {
  std::size_t origin = 0;
  std::size_t horizon = 0;
  double best_validation = 0.0;
  std::size_t best_epoch = 0;
};

namespace detail {

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"kind", to_string(c.kind)},
                        {"hidden", c.hidden},
                        {"mp_layers", c.mp_layers},
                        {"window", c.window},
                        {"horizon", c.horizon},
                        {"context", c.context},
                        {"features", c.features},
                        {"cluster_sizes", c.cluster_sizes},
                        {"heads", c.heads},
                        {"dropout", c.dropout},
                        {"seed", c.seed},
                        {"graph_level_readout", c.graph_level_readout}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.kind = model_kind_from(j.at("kind").get<std::string>());
  c.hidden = j.at("hidden").get<std::size_t>();
  c.mp_layers = j.at("mp_layers").get<std::size_t>();
  c.window = j.at("window").get<std::size_t>();
  c.horizon = j.at("horizon").get<std::size_t>();
  c.context = j.at("context").get<std::size_t>();
  c.features = j.at("features").get<std::size_t>();
  c.cluster_sizes = j.at("cluster_sizes").get<std::vector<std::size_t>>();
  c.heads = j.at("heads").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.graph_level_readout = j.at("graph_level_readout").get<bool>();
  return c;
}

inline nlohmann::json tensor_to_json(const Tensor& t) {
  std::vector<double> values(t.values());
  return nlohmann::json{{"shape", t.shape()}, {"values", std::move(values)}};
}

inline Tensor tensor_from_json(const nlohmann::json& j, const std::string& name) {
  auto shape = j.at("shape").get<std::vector<std::size_t>>();
  auto values = j.at("values").get<std::vector<double>>();
  std::size_t expect = 1;
  for (std::size_t d : shape) expect *= d;
  if (values.size() != expect)
    throw std::invalid_argument("checkpoint tensor '" + name + "' has " +
                                std::to_string(values.size()) + " values for shape " +
                                shape_string(shape));
  return Tensor::wrap(std::move(shape), std::move(values));
}

}  // namespace detail

/// Serializes config, provenance, and every named tensor. Keys are sorted by
/// the JSON library and doubles round-trip exactly, so saving, loading, and
/// saving again yields byte-identical files.
inline nlohmann::json checkpoint_to_json(Forecaster& fc, const CheckpointMeta& meta) {
  nlohmann::json tensors = nlohmann::json::object();
  const NamedTensors named = named_tensors(fc);
  for (const auto& [name, t] : named.trainable) tensors[name] = detail::tensor_to_json(*t);
  for (const auto& [name, t] : named.state) tensors[name] = detail::tensor_to_json(*t);
  return nlohmann::json{{"config", detail::config_to_json(fc.config)},
                        {"meta",
                         {{"origin", meta.origin},
                          {"horizon", meta.horizon},
                          {"best_validation", meta.best_validation},
                          {"best_epoch", meta.best_epoch}}},
                        {"tensors", std::move(tensors)}};
}

/// Rebuilds the forecaster from its stored config and overwrites every
/// parameter by name. The stored tensor set must match the model exactly.
inline std::pair<Forecaster, CheckpointMeta> checkpoint_from_json(const nlohmann::json& j) {
  Forecaster fc = make_forecaster(detail::config_from_json(j.at("config")));
  CheckpointMeta meta;
  const nlohmann::json& m = j.at("meta");
  meta.origin = m.at("origin").get<std::size_t>();
  meta.horizon = m.at("horizon").get<std::size_t>();
  meta.best_validation = m.at("best_validation").get<double>();
  meta.best_epoch = m.at("best_epoch").get<std::size_t>();

  const nlohmann::json& tensors = j.at("tensors");
  std::unordered_set<std::string> consumed;
  const NamedTensors named = named_tensors(fc);
  auto fill = [&](const ParamMap& params, bool trainable) {
    for (const auto& [name, t] : params) {
      auto it = tensors.find(name);
      if (it == tensors.end())
        throw std::invalid_argument("checkpoint is missing tensor '" + name + "'");
      Tensor loaded = detail::tensor_from_json(*it, name);
      if (loaded.shape() != t->shape())
        throw std::invalid_argument("checkpoint tensor '" + name + "' has shape " +
                                    shape_string(loaded.shape()) + ", model expects " +
                                    shape_string(t->shape()));
      *t = trainable ? loaded.with_grad() : loaded;
      consumed.insert(name);
    }
  };
  fill(named.trainable, true);
  fill(named.state, false);
  for (auto it = tensors.begin(); it != tensors.end(); ++it)
    if (!consumed.count(it.key()))
      throw std::invalid_argument("checkpoint holds unknown tensor '" + it.key() + "'");
  return {std::move(fc), meta};
}

inline void save_checkpoint(const std::string& path, Forecaster& fc, const CheckpointMeta& meta) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open checkpoint file '" + path + "' for writing");
  out << checkpoint_to_json(fc, meta).dump(2) << '\n';
  if (!out.good()) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

inline std::pair<Forecaster, CheckpointMeta> load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint file '" + path + "'");
  nlohmann::json j;
  in >> j;
  return checkpoint_from_json(j);
}

}  // namespace epicast
