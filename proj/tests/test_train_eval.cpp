#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstddef>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "epicast/checkpoint.hpp"
#include "epicast/data.hpp"
#include "epicast/eval.hpp"
#include "epicast/graph.hpp"
#include "epicast/metrics.hpp"
#include "epicast/models.hpp"
#include "epicast/train.hpp"

using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using namespace epicast;

namespace {

RegionGraph ring_graph(std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::string> labels;
  for (std::size_t u = 0; u < n; ++u) {
    pairs.emplace_back(u, (u + 1) % n);
    labels.push_back("R" + std::to_string(u));
  }
  return build_adjacency(n, pairs, labels);
}

/// Mildly noisy diffusion on a ring: each day mixes a region with its two
/// neighbours, so the graph models have real signal to learn.
CaseMatrix diffusion_cases(std::size_t n, std::size_t days, std::uint64_t seed) {
  CaseMatrix cm;
  for (std::size_t u = 0; u < n; ++u) cm.regions.push_back("R" + std::to_string(u));
  cm.start = Date{2022, 3, 1};
  cm.days = days;
  cm.counts.assign(n * days, 0.0);
  Rng rng(seed);
  for (std::size_t u = 0; u < n; ++u) cm.at(u, 0) = 10.0 + 5.0 * rng.uniform();
  for (std::size_t t = 1; t < days; ++t)
    for (std::size_t u = 0; u < n; ++u) {
      const double mixed = 0.6 * cm.at(u, t - 1) + 0.2 * cm.at((u + n - 1) % n, t - 1) +
                           0.2 * cm.at((u + 1) % n, t - 1);
      cm.at(u, t) = std::max(mixed + rng.uniform(-0.5, 0.5) + 0.2, 0.0);
    }
  return cm;
}

ModelConfig micro_config(ModelKind kind) {
  ModelConfig c;
  c.kind = kind;
  c.hidden = 4;
  c.mp_layers = 2;
  c.window = 3;
  c.features = 3;
  c.horizon = 2;
  c.context = is_temporal(kind) ? 3 : 1;
  c.dropout = 0.0;
  c.seed = 7;
  if (is_multiresolution(kind)) c.cluster_sizes = {3, 2};
  return c;
}

double val_mse(Forecaster& fc, const RegionGraph& graph, const SupervisedSet& set,
               const std::vector<std::size_t>& idx) {
  double total = 0.0;
  for (const std::size_t i : idx) {
    const SupervisedSample& s = set.samples[i];
    total += loss(fc.predict(s.windows, graph, false, nullptr), s.target).item();
  }
  return total / static_cast<double>(idx.size());
}

/// Expanded-moment least-squares slope, independent of the covariance form
/// used by the library.
double slope_oracle(const std::vector<double>& h, const std::vector<double>& v) {
  const double n = static_cast<double>(h.size());
  double sh = 0.0, sv = 0.0, shh = 0.0, shv = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    sh += h[i];
    sv += v[i];
    shh += h[i] * h[i];
    shv += h[i] * v[i];
  }
  return (n * shv - sh * sv) / (n * shh - sh * sh);
}

/// Groups a series CSV back into (model, horizon) -> (predictions, truths).
std::map<std::pair<std::string, std::size_t>, std::pair<std::vector<double>, std::vector<double>>>
parse_series_csv(const std::string& text) {
  std::map<std::pair<std::string, std::size_t>,
           std::pair<std::vector<double>, std::vector<double>>>
      by_key;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string model, horizon, origin, date, region, pred, truth;
    std::getline(row, model, ',');
    std::getline(row, horizon, ',');
    std::getline(row, origin, ',');
    std::getline(row, date, ',');
    std::getline(row, region, ',');
    std::getline(row, pred, ',');
    std::getline(row, truth, ',');
    auto& bucket = by_key[{model, std::stoul(horizon)}];
    bucket.first.push_back(std::stod(pred));
    bucket.second.push_back(std::stod(truth));
  }
  return by_key;
}

}  // namespace

TEST_CASE("error metrics match hand calculations") {
  const std::vector<double> preds{2.0, 4.0};
  const std::vector<double> truths{1.0, 1.0};
  CHECK(mae(preds, truths) == 2.0);
  CHECK(rmse(preds, truths) == std::sqrt(5.0));
}

TEST_CASE("coefficient of determination pins its anchor points") {
  const std::vector<double> truths{0.0, 10.0};
  CHECK(r2(truths, truths) == 1.0);
  CHECK_THAT(r2(std::vector<double>{10.0, 0.0}, truths), WithinAbs(-3.0, 1e-12));
  const std::vector<double> at_mean{5.0, 5.0};
  CHECK(r2(at_mean, truths) == 0.0);
}

TEST_CASE("rmse never beats mae") {
  Rng rng(314);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> p, t;
    for (int i = 0; i < 20; ++i) {
      p.push_back(rng.uniform(0.0, 100.0));
      t.push_back(rng.uniform(0.0, 100.0));
    }
    CHECK(rmse(p, t) >= mae(p, t));
  }
}

TEST_CASE("metric validation rejects malformed input") {
  using V = std::vector<double>;
  CHECK_THROWS_AS(mae(V{1.0}, V{1.0, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(rmse(V{}, V{}), std::invalid_argument);
  CHECK_THROWS_AS(r2(V{1.0, 2.0}, V{3.0, 3.0}), std::invalid_argument);
  CHECK_THROWS_AS(decay_slope(V{3.0}, V{1.0}), std::invalid_argument);
  CHECK_THROWS_AS(decay_slope(V{3.0, 3.0}, V{1.0, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(decay_slope(V{3.0, 7.0}, V{1.0}), std::invalid_argument);
}

TEST_CASE("slope of a metric line is recovered exactly") {
  const std::vector<double> horizons{3.0, 7.0, 14.0, 21.0};
  std::vector<double> on_line;
  for (const double h : horizons) on_line.push_back(2.0 * h + 5.0);
  CHECK_THAT(decay_slope(horizons, on_line), WithinAbs(2.0, 1e-12));

  const std::vector<double> flat{4.0, 4.0, 4.0, 4.0};
  CHECK(decay_slope(horizons, flat) == 0.0);

  Rng rng(99);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> values;
    for (std::size_t i = 0; i < horizons.size(); ++i) values.push_back(rng.uniform(0.0, 10.0));
    CHECK_THAT(decay_slope(horizons, values), WithinAbs(slope_oracle(horizons, values), 1e-12));
  }
}

TEST_CASE("early stopping waits out the grace period") {
  SECTION("plateau after the grace period stops at plateau plus patience") {
    EarlyStopping stop(50, 100);
    const std::size_t plateau = 73;
    std::size_t stopped_at = 0;
    for (std::size_t epoch = 1; epoch <= 300; ++epoch) {
      const double loss = epoch <= plateau ? 1.0 / static_cast<double>(epoch)
                                           : 1.0 / static_cast<double>(plateau);
      if (stop.observe(epoch, loss)) {
        stopped_at = epoch;
        break;
      }
    }
    CHECK(stopped_at == plateau + 50);
    CHECK(stop.best_epoch() == plateau);
  }

  SECTION("an early plateau still trains through the grace period") {
    EarlyStopping stop(50, 100);
    std::size_t stopped_at = 0;
    for (std::size_t epoch = 1; epoch <= 300; ++epoch) {
      if (stop.observe(epoch, epoch == 1 ? 1.0 : 2.0)) {
        stopped_at = epoch;
        break;
      }
    }
    CHECK(stopped_at == 100);
    CHECK(stop.best_epoch() == 1);
  }

  SECTION("steady improvement never stops") {
    EarlyStopping stop(50, 100);
    for (std::size_t epoch = 1; epoch <= 300; ++epoch)
      CHECK_FALSE(stop.observe(epoch, 1.0 / static_cast<double>(epoch)));
  }
}

TEST_CASE("training improves the validation loss") {
  const CaseMatrix cm = diffusion_cases(4, 40, 5);
  const RegionGraph graph = ring_graph(4);
  const SupervisedSet set = build_windows(cm, 3, 2, 1);
  REQUIRE(set.samples.size() == 36);
  std::vector<std::size_t> train_idx, valid_idx;
  for (std::size_t i = 0; i < 26; ++i) train_idx.push_back(i);
  for (std::size_t i = 26; i < 33; ++i) valid_idx.push_back(i);

  SECTION("a single epoch runs exactly once") {
    ModelConfig c = micro_config(ModelKind::kMpnn);
    Forecaster fc = make_forecaster(c);
    TrainConfig tc;
    tc.max_epochs = 1;
    tc.patience = 1;
    tc.patience_start_epoch = 1;
    tc.batch_size = 8;
    const TrainResult result = train_forecaster(fc, graph, set, train_idx, valid_idx, tc);
    CHECK(result.epochs_run == 1);
    CHECK(result.best_epoch == 1);
  }

  SECTION("the training curve ends below its start on almost every seed") {
    int improved = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      ModelConfig c = micro_config(ModelKind::kMpnn);
      c.seed = 100 + seed;
      Forecaster fc = make_forecaster(c);
      TrainConfig tc;
      tc.max_epochs = 30;
      tc.patience = 30;
      tc.patience_start_epoch = 30;
      tc.batch_size = 8;
      tc.seed = seed;
      const TrainResult result = train_forecaster(fc, graph, set, train_idx, valid_idx, tc);
      REQUIRE(result.training_losses.size() == 30);
      REQUIRE(result.validation_losses.size() == 30);
      if (result.training_losses.back() < result.training_losses.front()) ++improved;
    }
    CHECK(improved >= 19);
  }

  SECTION("the returned model reproduces its best validation loss") {
    ModelConfig c = micro_config(ModelKind::kMpnn);
    Forecaster fc = make_forecaster(c);
    TrainConfig tc;
    tc.max_epochs = 200;
    tc.patience = 2;
    tc.patience_start_epoch = 1;
    tc.batch_size = 8;
    const TrainResult result = train_forecaster(fc, graph, set, train_idx, valid_idx, tc);
    if (result.epochs_run < 200)
      CHECK(result.epochs_run - result.best_epoch >= 2);
    CHECK(val_mse(fc, graph, set, valid_idx) == result.best_validation);
  }

  SECTION("degenerate requests are rejected") {
    ModelConfig c = micro_config(ModelKind::kMpnn);
    Forecaster fc = make_forecaster(c);
    TrainConfig tc;
    CHECK_THROWS_AS(train_forecaster(fc, graph, set, {}, valid_idx, tc), std::invalid_argument);
    tc.patience_start_epoch = 400;  // past max_epochs
    CHECK_THROWS_AS(train_forecaster(fc, graph, set, train_idx, valid_idx, tc),
                    std::invalid_argument);
    TrainConfig bad_lr;
    bad_lr.learning_rate = 0.0;
    CHECK_THROWS_AS(train_forecaster(fc, graph, set, train_idx, valid_idx, bad_lr),
                    std::invalid_argument);
  }
}

TEST_CASE("divergent training reports the failing epoch") {
  CaseMatrix cm = diffusion_cases(4, 40, 5);
  for (double& v : cm.counts) v *= 1e160;  // squares overflow in the loss
  const RegionGraph graph = ring_graph(4);
  const SupervisedSet set = build_windows(cm, 3, 2, 1);
  std::vector<std::size_t> train_idx, valid_idx;
  for (std::size_t i = 0; i < 26; ++i) train_idx.push_back(i);
  for (std::size_t i = 26; i < 33; ++i) valid_idx.push_back(i);

  ModelConfig c = micro_config(ModelKind::kMpnn);
  Forecaster fc = make_forecaster(c);
  TrainConfig tc;
  tc.max_epochs = 5;
  tc.patience = 5;
  tc.patience_start_epoch = 5;
  try {
    train_forecaster(fc, graph, set, train_idx, valid_idx, tc);
    FAIL("training accepted a non-finite loss");
  } catch (const TrainingDivergence& e) {
    CHECK(e.epoch == 1);
    CHECK_THAT(e.what(), ContainsSubstring("epoch 1"));
  }
}

TEST_CASE("checkpoints round-trip exactly") {
  const CaseMatrix cm = diffusion_cases(4, 30, 8);
  const RegionGraph graph = ring_graph(4);
  const SupervisedSet set = build_windows(cm, 3, 2, 3);

  for (const ModelKind kind :
       {ModelKind::kMpnn, ModelKind::kMgnn, ModelKind::kMpnnLstm, ModelKind::kAtmgnn}) {
    DYNAMIC_SECTION("kind " << to_string(kind)) {
      ModelConfig c = micro_config(kind);
      c.seed = 40 + static_cast<std::uint64_t>(kind);
      Forecaster fc = make_forecaster(c);
      Rng rng(17);
      // Dirty any running statistics so saved state is not all zeros.
      for (int i = 0; i < 3; ++i) fc.predict(set.samples[i].windows, graph, true, &rng);
      const Tensor before = fc.predict(set.samples[5].windows, graph, false, nullptr);

      const CheckpointMeta meta{55, 2, 0.125, 42};
      const nlohmann::json saved = checkpoint_to_json(fc, meta);
      auto [loaded, loaded_meta] = checkpoint_from_json(nlohmann::json::parse(saved.dump()));
      CHECK(loaded_meta.origin == 55);
      CHECK(loaded_meta.horizon == 2);
      CHECK(loaded_meta.best_validation == 0.125);
      CHECK(loaded_meta.best_epoch == 42);

      const Tensor after = loaded.predict(set.samples[5].windows, graph, false, nullptr);
      REQUIRE(after.size() == before.size());
      for (std::size_t i = 0; i < before.size(); ++i) CHECK(after.at(i) == before.at(i));

      // Saving the loaded model again yields the same bytes.
      CHECK(checkpoint_to_json(loaded, loaded_meta).dump() == saved.dump());
    }
  }

  SECTION("mismatched tensor sets are rejected") {
    Forecaster fc = make_forecaster(micro_config(ModelKind::kMpnn));
    const nlohmann::json saved = checkpoint_to_json(fc, {});

    nlohmann::json missing = saved;
    missing["tensors"].erase(missing["tensors"].begin().key());
    CHECK_THROWS_WITH(checkpoint_from_json(missing), ContainsSubstring("missing"));

    nlohmann::json extra = saved;
    extra["tensors"]["nobody.weight"] = {{"shape", {1}}, {"values", {0.0}}};
    CHECK_THROWS_WITH(checkpoint_from_json(extra), ContainsSubstring("unknown"));

    nlohmann::json reshaped = saved;
    auto& t = reshaped["tensors"].begin().value();
    t["shape"] = {1};
    t["values"] = {0.5};
    CHECK_THROWS_WITH(checkpoint_from_json(reshaped), ContainsSubstring("shape"));
  }
}

TEST_CASE("hand-checkable evaluation on linear histories") {
  CaseMatrix cm;
  cm.regions = {"A", "B"};
  cm.start = Date{2022, 3, 1};
  cm.days = 12;
  cm.counts.assign(24, 0.0);
  for (std::size_t t = 0; t < 12; ++t) {
    cm.at(0, t) = static_cast<double>(t) + 1.0;
    cm.at(1, t) = 2.0 * static_cast<double>(t) + 1.0;
  }
  const RegionGraph graph = build_adjacency(
      2, std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}}, {"A", "B"});

  EvalSpec spec;
  spec.models = {"AVG", "AVG_WINDOW", "LAST_DAY", "LIN_REG"};
  spec.horizons = {2};
  spec.base.window = 3;
  spec.rolling = {8, 10, 2};

  const EvalReport report = evaluate_horizons(cm, graph, nullptr, spec);
  REQUIRE(report.rows.size() == 5);  // four baselines plus the constant-mean anchor
  auto row = [&](const std::string& model) {
    for (const EvalRow& r : report.rows)
      if (r.model == model) return r;
    FAIL("missing row for " + model);
    return EvalRow{};
  };

  // Histories run through day 8: region A holds 1..9, region B holds 1,3,..,17.
  // Truths at day 10 are 11 and 21.
  CHECK(row("AVG").mae == 9.0);
  CHECK(row("AVG").rmse == std::sqrt(90.0));
  CHECK_THAT(row("AVG").r2, WithinAbs(-2.6, 1e-12));

  CHECK(row("AVG_WINDOW").mae == 4.5);
  CHECK(row("AVG_WINDOW").rmse == std::sqrt(22.5));
  CHECK_THAT(row("AVG_WINDOW").r2, WithinAbs(0.1, 1e-12));

  CHECK(row("LAST_DAY").mae == 3.0);
  CHECK(row("LAST_DAY").rmse == std::sqrt(10.0));
  CHECK_THAT(row("LAST_DAY").r2, WithinAbs(0.6, 1e-12));

  // Both series are arithmetic progressions, so the pooled regression can
  // reproduce the targets up to the ridge fallback's epsilon.
  CHECK(row("LIN_REG").mae < 1e-4);
  CHECK(row("LIN_REG").r2 > 0.999999);

  CHECK(row("CONST_MEAN").mae == 5.0);
  CHECK(row("CONST_MEAN").rmse == 5.0);
  CHECK(row("CONST_MEAN").r2 == 0.0);

  SECTION("emitted series reproduce every row exactly") {
    std::ostringstream out;
    write_series_csv(out, cm, report);
    const auto parsed = parse_series_csv(out.str());
    for (const EvalRow& r : report.rows) {
      const auto it = parsed.find({r.model, r.horizon});
      REQUIRE(it != parsed.end());
      CHECK(mae(it->second.first, it->second.second) == r.mae);
      CHECK(rmse(it->second.first, it->second.second) == r.rmse);
      CHECK(r2(it->second.first, it->second.second) == r.r2);
    }
  }
}

TEST_CASE("evaluation pools origins into one row per model and horizon") {
  const CaseMatrix cm = diffusion_cases(4, 60, 5);
  const RegionGraph graph = ring_graph(4);

  EvalSpec spec;
  spec.models = {"AVG", "AVG_WINDOW", "LAST_DAY", "LIN_REG", "MPNN"};
  spec.horizons = {2, 4};
  spec.base = micro_config(ModelKind::kMpnn);
  spec.base.seed = 11;
  spec.train.max_epochs = 5;
  spec.train.patience = 5;
  spec.train.patience_start_epoch = 5;
  spec.train.batch_size = 64;
  spec.rolling = {45, 7, 7};

  const EvalReport report = evaluate_horizons(cm, graph, nullptr, spec);
  CHECK(report.rows.size() == 5 * 2 + 2);
  CHECK(report.slopes.size() == 6 * 3);
  for (const EvalSlope& s : report.slopes) CHECK(std::isfinite(s.slope));

  for (const EvalRow& r : report.rows) {
    CHECK(std::isfinite(r.mae));
    CHECK(r.mae >= 0.0);
    CHECK(r.rmse >= r.mae);
    CHECK(std::isfinite(r.r2));
    if (r.model == "CONST_MEAN") CHECK(r.r2 == 0.0);
  }

  // Both origins contribute points and no test day leaks into training.
  for (const EvalSeries& s : report.series) {
    REQUIRE(s.points.size() == 2 * 4);
    for (const EvalPoint& p : s.points) {
      CHECK(p.day == p.origin + s.horizon);
      CHECK(p.truth == cm.at(p.region, p.day));
    }
  }

  SECTION("the emitted table matches a recompute from the emitted series") {
    std::ostringstream series_out;
    write_series_csv(series_out, cm, report);
    const auto parsed = parse_series_csv(series_out.str());
    for (const EvalRow& r : report.rows) {
      const auto it = parsed.find({r.model, r.horizon});
      REQUIRE(it != parsed.end());
      CHECK(mae(it->second.first, it->second.second) == r.mae);
      CHECK(rmse(it->second.first, it->second.second) == r.rmse);
      CHECK(r2(it->second.first, it->second.second) == r.r2);
    }

    std::ostringstream table;
    write_metrics_csv(table, report);
    CHECK_THAT(table.str(), ContainsSubstring("model,horizon,mae,rmse,r2"));
    std::ostringstream slopes;
    write_slopes_csv(slopes, report);
    CHECK_THAT(slopes.str(), ContainsSubstring("model,metric,slope"));
  }
}

TEST_CASE("rollouts reproduce one-step predictions at lag zero") {
  const CaseMatrix cm = diffusion_cases(4, 30, 21);
  const RegionGraph graph = ring_graph(4);
  const SupervisedSet set = build_windows(cm, 3, 2, 1);

  // Train briefly so predictions are positive and input-dependent; an
  // untrained model can clamp to all zeros and make every comparison vacuous.
  Forecaster fc = make_forecaster(micro_config(ModelKind::kMpnn));
  std::vector<std::size_t> train_idx, valid_idx;
  for (std::size_t i = 0; i < 18; ++i) train_idx.push_back(i);
  for (std::size_t i = 18; i < 24; ++i) valid_idx.push_back(i);
  TrainConfig tc;
  tc.max_epochs = 60;
  tc.patience = 60;
  tc.patience_start_epoch = 60;
  tc.batch_size = 8;
  tc.learning_rate = 1e-2;
  train_forecaster(fc, graph, set, train_idx, valid_idx, tc);

  const auto rolled = autoregressive_forecast(fc, cm, graph, nullptr, 20, 5, 0);
  REQUIRE(rolled.size() == 5);
  double magnitude = 0.0;
  for (const auto& day : rolled)
    for (const double v : day) magnitude = std::max(magnitude, v);
  REQUIRE(magnitude > 0.0);
  for (std::size_t s = 0; s < rolled.size(); ++s) {
    const std::size_t target = 20 + s;
    const SupervisedSample* sample = nullptr;
    for (const SupervisedSample& cand : set.samples)
      if (cand.target_day == target) sample = &cand;
    REQUIRE(sample != nullptr);
    const Prediction direct = to_prediction(fc.predict(sample->windows, graph, false, nullptr));
    REQUIRE(rolled[s].size() == direct.values.size());
    for (std::size_t u = 0; u < 4; ++u) CHECK(rolled[s][u] == direct.values[u]);
  }

  SECTION("a single step is a plain forward pass") {
    const auto one = autoregressive_forecast(fc, cm, graph, nullptr, 20, 1, 0);
    CHECK(one.size() == 1);
    CHECK(one[0] == rolled[0]);
  }

  SECTION("the feedback lag withholds young observations") {
    const auto lagged = autoregressive_forecast(fc, cm, graph, nullptr, 20, 3, 9);
    // With horizon 2, the first step whose input window reaches a forecast
    // day is step index 2; earlier steps read only pre-forecast history and
    // must match the lag-0 rollout exactly.
    CHECK(lagged[0] == rolled[0]);
    CHECK(lagged[1] == rolled[1]);
    double diff = 0.0;
    for (std::size_t u = 0; u < 4; ++u) diff += std::abs(lagged[2][u] - rolled[2][u]);
    CHECK(diff > 0.0);
  }
}

TEST_CASE("rollouts stay finite past the observed history") {
  const CaseMatrix cm = diffusion_cases(4, 30, 22);
  const RegionGraph graph = ring_graph(4);

  for (const ModelKind kind : {ModelKind::kMpnn, ModelKind::kAtmgnn}) {
    DYNAMIC_SECTION("kind " << to_string(kind)) {
      Forecaster fc = make_forecaster(micro_config(kind));
      const SupervisedSet set = build_windows(cm, 3, 2, fc.config.context);
      std::vector<std::size_t> train_idx, valid_idx;
      for (std::size_t i = 0; i < 16; ++i) train_idx.push_back(i);
      for (std::size_t i = 16; i < 22; ++i) valid_idx.push_back(i);
      TrainConfig tc;
      tc.max_epochs = 20;
      tc.patience = 20;
      tc.patience_start_epoch = 20;
      tc.batch_size = 8;
      tc.learning_rate = 1e-2;
      train_forecaster(fc, graph, set, train_idx, valid_idx, tc);

      const auto rolled = autoregressive_forecast(fc, cm, graph, nullptr, cm.days, 30, 3);
      REQUIRE(rolled.size() == 30);
      for (const auto& day : rolled) {
        REQUIRE(day.size() == 4);
        for (const double v : day) {
          CHECK(std::isfinite(v));
          CHECK(v >= 0.0);
        }
      }
      const auto again = autoregressive_forecast(fc, cm, graph, nullptr, cm.days, 30, 3);
      CHECK(again == rolled);
    }
  }

  SECTION("invalid requests are rejected") {
    Forecaster fc = make_forecaster(micro_config(ModelKind::kMpnn));
    CHECK_THROWS_AS(autoregressive_forecast(fc, cm, graph, nullptr, 20, 0, 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(autoregressive_forecast(fc, cm, graph, nullptr, 2, 5, 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(autoregressive_forecast(fc, cm, graph, nullptr, cm.days + 1, 5, 0),
                    std::invalid_argument);
  }
}
