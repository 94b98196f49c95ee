#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "epicast/baselines.hpp"
#include "epicast/data.hpp"
#include "epicast/graph.hpp"
#include "epicast/metrics.hpp"
#include "epicast/models.hpp"
#include "epicast/train.hpp"

namespace epicast {

/// Shortest decimal form that parses back to the same double, so metrics
/// recomputed from an emitted file match the emitted metrics exactly.
inline std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("failed to format a double");
  return std::string(buf, ptr);
}

struct RollingSpec {
  std::size_t first_origin = 0;
  std::size_t step = 7;
  std::size_t validation_len = 14;
};

/// One evaluation campaign: which predictors, at which horizons, trained
/// fresh at every rolling origin.
struct EvalSpec {
  std::vector<std::string> models;
  std::vector<std::size_t> horizons{3, 7, 14, 21};
  ModelConfig base;
  TrainConfig train;
  RollingSpec rolling;
  bool const_mean_rows = true;
};

struct EvalPoint {
  std::size_t origin = 0, day = 0, region = 0;
  double prediction = 0.0, truth = 0.0;
};

struct EvalSeries {
  std::string model;
  std::size_t horizon = 0;
  std::vector<EvalPoint> points;
};

struct EvalRow {
  std::string model;
  std::size_t horizon = 0;
  double mae = 0.0, rmse = 0.0, r2 = 0.0;
};

struct EvalSlope {
  std::string model, metric;
  double slope = 0.0;
};

/// Rows hold metrics pooled over every (origin, region) pair of one model
/// and horizon; `series` retains the underlying points so each row can be
/// recomputed exactly.
struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<EvalSlope> slopes;
  std::vector<EvalSeries> series;
};

inline bool is_baseline_name(const std::string& m) {
  return m == "AVG" || m == "AVG_WINDOW" || m == "LAST_DAY" || m == "LIN_REG";
}

namespace detail {

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b,
                                 std::uint64_t c) {
  std::uint64_t x = base;
  for (const std::uint64_t v : {a, b, c}) {
    x += 0x9E3779B97F4A7C15ull + v;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    x ^= x >> 31;
  }
  return x;
}

inline std::vector<double> baseline_predictions(const std::string& model, const CaseMatrix& cm,
                                                const RollingSplit& split, std::size_t window,
                                                std::size_t horizon) {
  const History history = cm.history_until(split.origin + 1);
  const std::size_t n = cm.regions.size();
  std::vector<double> preds(n);
  if (model == "LIN_REG") return linreg_baseline(history, window, horizon);
  for (std::size_t u = 0; u < n; ++u) {
    if (model == "AVG")
      preds[u] = avg_baseline(history, u);
    else if (model == "AVG_WINDOW")
      preds[u] = avg_window_baseline(history, u, window);
    else if (model == "LAST_DAY")
      preds[u] = last_day_baseline(history, u);
    else
      throw std::invalid_argument("unknown baseline '" + model + "'");
  }
  return preds;
}

inline EvalRow pooled_row(const EvalSeries& series) {
  std::vector<double> preds, truths;
  preds.reserve(series.points.size());
  truths.reserve(series.points.size());
  for (const EvalPoint& p : series.points) {
    preds.push_back(p.prediction);
    truths.push_back(p.truth);
  }
  return {series.model, series.horizon, mae(preds, truths), rmse(preds, truths),
          r2(preds, truths)};
}

}  // namespace detail

/// Trains one model per (kind, horizon, origin) and pools the resulting
/// test points per (kind, horizon). Baselines run over the same splits.
/// CONST_MEAN rows predict the pooled truth mean and land at R^2 = 0
/// exactly, anchoring the scale of the table.
inline EvalReport evaluate_horizons(const CaseMatrix& cm, const RegionGraph& graph,
                                    const EconFeatures* econ, const EvalSpec& spec) {
  if (spec.models.empty()) throw std::invalid_argument("evaluate_horizons with no models");
  if (spec.horizons.empty()) throw std::invalid_argument("evaluate_horizons with no horizons");
  if (graph.n != cm.regions.size())
    throw std::invalid_argument("graph has " + std::to_string(graph.n) + " regions, cases have " +
                                std::to_string(cm.regions.size()));

  EvalReport report;
  const std::size_t n = cm.regions.size();
  const std::size_t static_cols = econ ? econ->categories.size() : 0;

  for (const std::string& model : spec.models) {
    for (const std::size_t horizon : spec.horizons) {
      const std::vector<RollingSplit> splits =
          rolling_splits(cm.days, spec.rolling.first_origin, spec.rolling.step,
                         spec.rolling.validation_len, horizon);
      EvalSeries series{model, horizon, {}};

      if (is_baseline_name(model)) {
        for (const RollingSplit& split : splits) {
          const std::vector<double> preds =
              detail::baseline_predictions(model, cm, split, spec.base.window, horizon);
          for (std::size_t u = 0; u < n; ++u)
            series.points.push_back(
                {split.origin, split.test_target, u, preds[u], cm.at(u, split.test_target)});
        }
      } else {
        ModelConfig c = spec.base;
        c.kind = model_kind_from(model);
        c.horizon = horizon;
        if (!is_temporal(c.kind)) c.context = 1;
        c.features = c.window + static_cols;
        const SupervisedSet set = build_windows(cm, c.window, horizon, c.context, econ);
        for (const RollingSplit& split : splits) {
          const SplitIndices idx = assign_split(set, split);
          if (idx.train.empty() || idx.validation.empty() || idx.test.empty())
            throw std::invalid_argument("origin " + std::to_string(split.origin) +
                                        " leaves an empty split at horizon " +
                                        std::to_string(horizon));
          c.seed = detail::derive_seed(spec.base.seed, static_cast<std::uint64_t>(c.kind), horizon,
                                       split.origin);
          Forecaster fc = make_forecaster(c);
          TrainConfig tc = spec.train;
          tc.seed = detail::derive_seed(spec.train.seed, static_cast<std::uint64_t>(c.kind),
                                        horizon, split.origin + 1);
          train_forecaster(fc, graph, set, idx.train, idx.validation, tc);
          for (const std::size_t i : idx.test) {
            const SupervisedSample& s = set.samples[i];
            const Prediction pred = to_prediction(fc.predict(s.windows, graph, false, nullptr));
            for (std::size_t u = 0; u < n; ++u)
              series.points.push_back(
                  {split.origin, s.target_day, u, pred.values[u], cm.at(u, s.target_day)});
          }
        }
      }

      report.rows.push_back(detail::pooled_row(series));
      report.series.push_back(std::move(series));
    }
  }

  if (spec.const_mean_rows) {
    for (const std::size_t horizon : spec.horizons) {
      const std::vector<RollingSplit> splits =
          rolling_splits(cm.days, spec.rolling.first_origin, spec.rolling.step,
                         spec.rolling.validation_len, horizon);
      std::vector<double> truths;
      for (const RollingSplit& split : splits)
        for (std::size_t u = 0; u < n; ++u) truths.push_back(cm.at(u, split.test_target));
      double mean = 0.0;
      for (const double t : truths) mean += t;
      mean /= static_cast<double>(truths.size());
      EvalSeries series{"CONST_MEAN", horizon, {}};
      std::size_t i = 0;
      for (const RollingSplit& split : splits)
        for (std::size_t u = 0; u < n; ++u)
          series.points.push_back({split.origin, split.test_target, u, mean, truths[i++]});
      report.rows.push_back(detail::pooled_row(series));
      report.series.push_back(std::move(series));
    }
  }

  if (spec.horizons.size() >= 2) {
    std::vector<std::string> names = spec.models;
    if (spec.const_mean_rows) names.push_back("CONST_MEAN");
    const std::vector<double> hs(spec.horizons.begin(), spec.horizons.end());
    for (const std::string& model : names) {
      std::vector<double> maes, rmses, r2s;
      for (const EvalRow& row : report.rows) {
        if (row.model != model) continue;
        maes.push_back(row.mae);
        rmses.push_back(row.rmse);
        r2s.push_back(row.r2);
      }
      report.slopes.push_back({model, "mae", decay_slope(hs, maes)});
      report.slopes.push_back({model, "rmse", decay_slope(hs, rmses)});
      report.slopes.push_back({model, "r2", decay_slope(hs, r2s)});
    }
  }

  return report;
}

inline void write_metrics_csv(std::ostream& out, const EvalReport& report) {
  out << "# metrics pooled across rolling origins: each row aggregates every (origin, region)\n"
      << "# test point of one model and horizon; recompute from the series file to verify\n"
      << "model,horizon,mae,rmse,r2\n";
  for (const EvalRow& row : report.rows)
    out << row.model << ',' << row.horizon << ',' << format_double(row.mae) << ','
        << format_double(row.rmse) << ',' << format_double(row.r2) << '\n';
}

inline void write_slopes_csv(std::ostream& out, const EvalReport& report) {
  out << "model,metric,slope\n";
  for (const EvalSlope& s : report.slopes)
    out << s.model << ',' << s.metric << ',' << format_double(s.slope) << '\n';
}

inline void write_series_csv(std::ostream& out, const CaseMatrix& cm, const EvalReport& report) {
  out << "model,horizon,origin,date,region,prediction,truth\n";
  for (const EvalSeries& series : report.series)
    for (const EvalPoint& p : series.points)
      out << series.model << ',' << series.horizon << ',' << p.origin << ','
          << to_string(cm.date_at(p.day)) << ',' << cm.regions[p.region] << ','
          << format_double(p.prediction) << ',' << format_double(p.truth) << '\n';
}

/// Rolls the forecaster forward `steps` days starting at `first_day`.
/// Observed counts are fed back only once they are `lag` days old relative
/// to the day being predicted; younger input days come from the model's own
/// clamped predictions. lag 0 therefore reproduces plain one-step
/// prediction on observed data for as long as observations last.
inline std::vector<std::vector<double>> autoregressive_forecast(Forecaster& fc,
                                                                const CaseMatrix& truth,
                                                                const RegionGraph& graph,
                                                                const EconFeatures* econ,
                                                                std::size_t first_day,
                                                                std::size_t steps,
                                                                std::size_t lag) {
  const ModelConfig& c = fc.config;
  const std::size_t h = c.horizon, w = c.window;
  const std::size_t ctx = is_temporal(c.kind) ? c.context : 1;
  const std::size_t n = truth.regions.size();
  const std::size_t static_cols = econ ? econ->categories.size() : 0;
  if (steps == 0) throw std::invalid_argument("forecast needs steps >= 1");
  if (w + static_cols != c.features)
    throw std::invalid_argument("forecast features disagree with the model configuration");
  if (first_day < h + w + ctx - 2)
    throw std::invalid_argument("first forecast day " + std::to_string(first_day) +
                                " leaves no room for the input windows");
  if (first_day > truth.days)
    throw std::invalid_argument("first forecast day " + std::to_string(first_day) +
                                " lies past the observed history (" + std::to_string(truth.days) +
                                " days)");
  if (econ && econ->values.size() != n * static_cols)
    throw std::invalid_argument("static features sized for a different region set");

  std::vector<std::vector<double>> out;
  out.reserve(steps);
  auto value_at = [&](std::size_t u, std::size_t dd, std::size_t target) -> double {
    const bool released = dd < truth.days && dd + lag < target;
    if (released) return truth.at(u, dd);
    if (dd >= first_day) return out[dd - first_day][u];
    if (dd < truth.days) return truth.at(u, dd);  // pre-forecast history is always observed
    throw std::logic_error("forecast read a day it never produced");
  };

  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t target = first_day + s;
    const std::size_t anchor = target - h;
    std::vector<NodeFeatureWindow> windows;
    windows.reserve(ctx);
    for (std::size_t wi = 0; wi < ctx; ++wi) {
      const std::size_t end = anchor - (ctx - 1) + wi;
      std::vector<double> x(n * (w + static_cols));
      for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t j = 0; j < w; ++j)
          x[u * (w + static_cols) + j] = value_at(u, end - w + 1 + j, target);
        for (std::size_t j = 0; j < static_cols; ++j)
          x[u * (w + static_cols) + w + j] = econ->at(u, j);
      }
      windows.push_back({Tensor::matrix(n, w + static_cols, std::move(x)), end, w});
    }
    out.push_back(to_prediction(fc.predict(windows, graph, false, nullptr)).values);
  }
  return out;
}

inline void write_forecast_csv(std::ostream& out, const CaseMatrix& cm, std::size_t first_day,
                               const std::vector<std::vector<double>>& forecast) {
  out << "date,region,prediction\n";
  for (std::size_t s = 0; s < forecast.size(); ++s)
    for (std::size_t u = 0; u < cm.regions.size(); ++u)
      out << to_string(cm.date_at(first_day + s)) << ',' << cm.regions[u] << ','
          << format_double(forecast[s][u]) << '\n';
}

}  // namespace epicast
