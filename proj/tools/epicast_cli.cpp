#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "epicast/baselines.hpp"
#include "epicast/checkpoint.hpp"
#include "epicast/data.hpp"
#include "epicast/eval.hpp"
#include "epicast/graph.hpp"
#include "epicast/metrics.hpp"
#include "epicast/models.hpp"
#include "epicast/train.hpp"

namespace {

using nlohmann::json;

/// Everything a run needs, fed from an optional JSON config file and then
/// overridden by command-line flags (flags always win).
struct RunConfig {
  std::string cases, adjacency, economic, mapping;
  std::string out = ".";
  std::string first_date, last_date;

  std::string model = "MPNN_LSTM";
  std::vector<std::string> eval_models;
  std::vector<std::size_t> horizons{3, 7, 14, 21};
  std::size_t hidden = 64;
  std::size_t mp_layers = 2;
  std::size_t window = 7;
  std::size_t context = 7;
  std::size_t heads = 1;
  std::vector<std::size_t> clusters{10, 5};
  double dropout = 0.5;
  bool graph_level_readout = false;

  std::size_t max_epochs = 300;
  std::size_t patience = 50;
  std::size_t patience_start = 100;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  std::uint64_t seed = 42;

  std::size_t first_origin = 0;  // 0 = derive from the data
  std::size_t origin_step = 7;
  std::size_t validation_len = 14;

  std::size_t steps = 30;
  long long lag = 3;
  long long first_day = -1;  // -1 = first unobserved day
  std::size_t horizon = 0;   // 0 = first entry of `horizons`
};

bool verbose_enabled() {
  const char* env = std::getenv("EPICAST_VERBOSE");
  return env != nullptr && std::string(env) != "0";
}

void note(const std::string& message) {
  if (verbose_enabled()) std::cerr << "epicast: " << message << '\n';
}

std::string slurp(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(std::string(what) + " file '" + path + "' cannot be opened");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

epicast::Date require_date(const std::string& s, const char* what) {
  const std::optional<epicast::Date> d = epicast::parse_date(s);
  if (!d) throw std::runtime_error(std::string(what) + " '" + s + "' is not a valid ISO date");
  return *d;
}

template <typename T>
void from_config(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

void load_config_file(const std::string& path, RunConfig& rc) {
  json j = json::parse(slurp(path, "config"));
  from_config(j, "cases", rc.cases);
  from_config(j, "adjacency", rc.adjacency);
  from_config(j, "economic", rc.economic);
  from_config(j, "mapping", rc.mapping);
  from_config(j, "out", rc.out);
  from_config(j, "first_date", rc.first_date);
  from_config(j, "last_date", rc.last_date);
  from_config(j, "model", rc.model);
  from_config(j, "eval_models", rc.eval_models);
  from_config(j, "horizons", rc.horizons);
  from_config(j, "hidden", rc.hidden);
  from_config(j, "mp_layers", rc.mp_layers);
  from_config(j, "window", rc.window);
  from_config(j, "context", rc.context);
  from_config(j, "heads", rc.heads);
  from_config(j, "clusters", rc.clusters);
  from_config(j, "dropout", rc.dropout);
  from_config(j, "graph_level_readout", rc.graph_level_readout);
  from_config(j, "max_epochs", rc.max_epochs);
  from_config(j, "patience", rc.patience);
  from_config(j, "patience_start", rc.patience_start);
  from_config(j, "batch_size", rc.batch_size);
  from_config(j, "learning_rate", rc.learning_rate);
  from_config(j, "seed", rc.seed);
  from_config(j, "first_origin", rc.first_origin);
  from_config(j, "origin_step", rc.origin_step);
  from_config(j, "validation_len", rc.validation_len);
  from_config(j, "steps", rc.steps);
  from_config(j, "lag", rc.lag);
  from_config(j, "first_day", rc.first_day);
  from_config(j, "horizon", rc.horizon);
}

// ---------------------------------------------------------------------------
// Dataset bundle

struct Bundle {
  epicast::CaseMatrix cases;
  epicast::RegionGraph graph;
  epicast::EconFeatures econ;  // empty categories = no static block
};

std::string bundle_path(const RunConfig& rc) { return rc.out + "/bundle.json"; }

json bundle_to_json(const Bundle& b) {
  json edges = json::array();
  const epicast::Tensor& a = b.graph.adjacency;
  for (std::size_t u = 0; u < b.graph.n; ++u)
    for (std::size_t v = u + 1; v < b.graph.n; ++v)
      if (a.at(u * b.graph.n + v) != 0.0) edges.push_back({u, v});
  json j{{"regions", b.cases.regions},
         {"start", epicast::to_string(b.cases.start)},
         {"days", b.cases.days},
         {"counts", b.cases.counts},
         {"edges", std::move(edges)}};
  if (!b.econ.categories.empty())
    j["static"] = {{"categories", b.econ.categories}, {"values", b.econ.values}};
  return j;
}

Bundle bundle_from_json(const json& j) {
  Bundle b;
  b.cases.regions = j.at("regions").get<std::vector<std::string>>();
  b.cases.start = require_date(j.at("start").get<std::string>(), "bundle start");
  b.cases.days = j.at("days").get<std::size_t>();
  b.cases.counts = j.at("counts").get<std::vector<double>>();
  if (b.cases.counts.size() != b.cases.regions.size() * b.cases.days)
    throw std::runtime_error("bundle counts do not match regions x days");
  auto edges = j.at("edges").get<std::vector<std::pair<std::size_t, std::size_t>>>();
  b.graph = epicast::build_adjacency(b.cases.regions.size(), edges, b.cases.regions);
  if (j.contains("static")) {
    b.econ.categories = j.at("static").at("categories").get<std::vector<std::string>>();
    b.econ.values = j.at("static").at("values").get<std::vector<double>>();
    if (b.econ.values.size() != b.cases.regions.size() * b.econ.categories.size())
      throw std::runtime_error("bundle static features do not match regions x categories");
  }
  return b;
}

Bundle load_bundle(const RunConfig& rc) {
  const std::string path = bundle_path(rc);
  if (!std::filesystem::exists(path))
    throw std::runtime_error("no dataset bundle at '" + path + "'; run `ingest` first");
  return bundle_from_json(json::parse(slurp(path, "bundle")));
}

void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << body;
  if (!out.good()) throw std::runtime_error("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Shared model/train assembly

const epicast::EconFeatures* static_block(const Bundle& b) {
  return b.econ.categories.empty() ? nullptr : &b.econ;
}

epicast::ModelConfig model_config(const RunConfig& rc, const Bundle& b, std::size_t horizon) {
  epicast::ModelConfig c;
  c.kind = epicast::model_kind_from(rc.model);
  c.hidden = rc.hidden;
  c.mp_layers = rc.mp_layers;
  c.window = rc.window;
  c.horizon = horizon;
  c.context = epicast::is_temporal(c.kind) ? rc.context : 1;
  c.features = rc.window + b.econ.categories.size();
  if (epicast::is_multiresolution(c.kind)) c.cluster_sizes = rc.clusters;
  c.heads = rc.heads;
  c.dropout = rc.dropout;
  c.graph_level_readout = rc.graph_level_readout;
  return c;
}

epicast::TrainConfig train_config(const RunConfig& rc) {
  epicast::TrainConfig tc;
  tc.max_epochs = rc.max_epochs;
  tc.patience = rc.patience;
  tc.patience_start_epoch = rc.patience_start;
  tc.batch_size = rc.batch_size;
  tc.learning_rate = rc.learning_rate;
  tc.seed = rc.seed;
  return tc;
}

std::string checkpoint_path(const RunConfig& rc, std::size_t horizon) {
  return rc.out + "/checkpoint_" + rc.model + "_h" + std::to_string(horizon) + ".json";
}

// ---------------------------------------------------------------------------
// ingest

int cmd_ingest(const RunConfig& rc) {
  if (rc.cases.empty() || rc.adjacency.empty())
    throw std::runtime_error("ingest needs --cases and --adjacency");
  const std::string case_text = slurp(rc.cases, "case");
  const std::string adjacency_text = slurp(rc.adjacency, "adjacency");

  // First pass over the case rows: region labels and the covered date range.
  // Strict per-row validation happens inside the ingest proper, which knows
  // the physical line numbers.
  std::set<std::string> labels;
  bool have_range = false;
  epicast::Date first{}, last{};
  {
    std::istringstream in(case_text);
    std::string line;
    bool saw_header = false;
    while (std::getline(in, line)) {
      const std::string t = epicast::detail::trim(line);
      if (t.empty()) continue;
      if (!saw_header) {
        saw_header = true;
        continue;
      }
      const std::vector<std::string> fields = epicast::detail::split_csv(t);
      if (fields.size() < 2) continue;
      // Rows the strict pass will reject are simply skipped here.
      if (const std::optional<epicast::Date> d = epicast::parse_date(fields[0])) {
        if (!have_range || *d < first) first = *d;
        if (!have_range || last < *d) last = *d;
        have_range = true;
      }
      if (!fields[1].empty()) labels.insert(fields[1]);
    }
  }
  if (!rc.first_date.empty()) {
    first = require_date(rc.first_date, "--first-date");
    have_range = true;
  }
  if (!rc.last_date.empty()) {
    last = require_date(rc.last_date, "--last-date");
    have_range = true;
  }

  Bundle b;
  if (labels.empty()) {
    // Nothing usable in the case file: keep going with a zero-count matrix
    // over the regions named by the adjacency list.
    std::cerr << "warning: case file '" << rc.cases << "' holds no case rows\n";
    std::set<std::string> adj_labels;
    std::istringstream in(adjacency_text);
    std::string line;
    while (std::getline(in, line)) {
      const std::string t = epicast::detail::trim(line);
      if (t.empty()) continue;
      const std::vector<std::string> fields = epicast::detail::split_csv(t);
      for (const std::string& f : fields)
        if (!f.empty()) adj_labels.insert(f);
    }
    b.cases.regions.assign(adj_labels.begin(), adj_labels.end());
    b.cases.start = have_range ? first : epicast::Date{2020, 1, 1};
    b.cases.days = have_range
                       ? static_cast<std::size_t>(epicast::days_from_civil(last) -
                                                  epicast::days_from_civil(first)) +
                             1
                       : 0;
    b.cases.counts.assign(b.cases.regions.size() * b.cases.days, 0.0);
  } else {
    b.cases.regions.assign(labels.begin(), labels.end());
    std::istringstream in(case_text);
    b.cases = epicast::ingest_cases(in, b.cases.regions, first, last);
  }

  {
    std::istringstream in(adjacency_text);
    const auto pairs = epicast::read_border_pairs(in, b.cases.regions);
    if (b.cases.regions.empty())
      throw std::runtime_error("no regions in either the case or the adjacency file");
    b.graph = epicast::build_adjacency(b.cases.regions.size(), pairs, b.cases.regions);
  }

  if (!rc.economic.empty() || !rc.mapping.empty()) {
    if (rc.economic.empty() || rc.mapping.empty())
      throw std::runtime_error("static features need both --economic and --mapping");
    std::istringstream econ_in(slurp(rc.economic, "economic"));
    std::istringstream map_in(slurp(rc.mapping, "mapping"));
    b.econ = epicast::merge_economic(b.cases.regions, epicast::read_econ_table(econ_in),
                                     epicast::read_mapping_table(map_in));
  }

  std::filesystem::create_directories(rc.out);
  write_text_file(bundle_path(rc), bundle_to_json(b).dump(2) + "\n");
  std::printf("ingested %zu regions, %zu days, %.0f confirmed cases -> %s\n",
              b.cases.regions.size(), b.cases.days, b.cases.total(), bundle_path(rc).c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const RunConfig& rc) {
  const Bundle b = load_bundle(rc);
  if (rc.horizons.empty()) throw std::runtime_error("train needs a nonempty horizons list");

  struct Trained {
    epicast::Forecaster fc;
    epicast::CheckpointMeta meta;
  };
  std::vector<Trained> done;
  for (const std::size_t h : rc.horizons) {
    epicast::ModelConfig c = model_config(rc, b, h);
    if (b.cases.days <= h + 1 + rc.validation_len)
      throw std::runtime_error("dataset too short to train at horizon " + std::to_string(h));
    const std::size_t origin = b.cases.days - h - 1;  // newest observed target
    const epicast::RollingSplit split{origin, origin - rc.validation_len, origin + h};
    const epicast::SupervisedSet set =
        epicast::build_windows(b.cases, c.window, h, c.context, static_block(b));
    const epicast::SplitIndices idx = epicast::assign_split(set, split);
    if (idx.train.empty() || idx.validation.empty())
      throw std::runtime_error("dataset too short to train at horizon " + std::to_string(h));

    c.seed = epicast::detail::derive_seed(rc.seed, static_cast<std::uint64_t>(c.kind), h, origin);
    epicast::Forecaster fc = epicast::make_forecaster(c);
    epicast::TrainConfig tc = train_config(rc);
    tc.seed = epicast::detail::derive_seed(rc.seed, static_cast<std::uint64_t>(c.kind), h, origin + 1);
    note("training " + rc.model + " at horizon " + std::to_string(h));
    const epicast::TrainResult result = epicast::train_forecaster(fc, b.graph, set, idx.train, idx.validation, tc);
    done.push_back({std::move(fc), {origin, h, result.best_validation, result.best_epoch}});
    std::printf("trained %s h=%zu best_validation=%s best_epoch=%zu epochs=%zu\n", rc.model.c_str(),
                h, epicast::format_double(result.best_validation).c_str(), result.best_epoch,
                result.epochs_run);
  }

  std::filesystem::create_directories(rc.out);
  for (Trained& t : done)
    epicast::save_checkpoint(checkpoint_path(rc, t.meta.horizon), t.fc, t.meta);
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate / baselines

int cmd_evaluate(const RunConfig& rc, bool baselines_only) {
  const Bundle b = load_bundle(rc);
  epicast::EvalSpec spec;
  if (baselines_only)
    spec.models = {"AVG", "AVG_WINDOW", "LAST_DAY", "LIN_REG"};
  else if (!rc.eval_models.empty())
    spec.models = rc.eval_models;
  else
    spec.models = {"AVG", "AVG_WINDOW", "LAST_DAY", "LIN_REG", rc.model};
  spec.horizons = rc.horizons;
  spec.base = model_config(rc, b, rc.horizons.empty() ? 1 : rc.horizons.front());
  spec.base.seed = rc.seed;
  spec.train = train_config(rc);
  std::size_t max_h = 0;
  for (const std::size_t h : spec.horizons) max_h = std::max(max_h, h);
  spec.rolling.step = rc.origin_step;
  spec.rolling.validation_len = rc.validation_len;
  if (rc.first_origin != 0) {
    spec.rolling.first_origin = rc.first_origin;
  } else {
    // Three origins, the last one targeting the newest observed day.
    const std::size_t span = max_h + 1 + 2 * rc.origin_step;
    if (b.cases.days <= span + rc.validation_len)
      throw std::runtime_error("dataset too short for evaluation; set --first-origin explicitly");
    spec.rolling.first_origin = b.cases.days - span;
  }

  note("evaluating " + std::to_string(spec.models.size()) + " predictors");
  const epicast::EvalReport report = epicast::evaluate_horizons(b.cases, b.graph, static_block(b), spec);

  std::ostringstream metrics, slopes, series;
  epicast::write_metrics_csv(metrics, report);
  epicast::write_slopes_csv(slopes, report);
  epicast::write_series_csv(series, b.cases, report);

  std::filesystem::create_directories(rc.out);
  write_text_file(rc.out + "/metrics.csv", metrics.str());
  write_text_file(rc.out + "/slopes.csv", slopes.str());
  write_text_file(rc.out + "/series.csv", series.str());
  std::printf("wrote %s/metrics.csv, slopes.csv and series.csv (%zu rows)\n", rc.out.c_str(),
              report.rows.size());
  return 0;
}

// ---------------------------------------------------------------------------
// forecast

int cmd_forecast(const RunConfig& rc) {
  if (rc.lag < 0 || rc.lag > 9)
    throw std::runtime_error("truth feed-in lag must lie in [0, 9], got " + std::to_string(rc.lag));
  if (rc.steps == 0) throw std::runtime_error("forecast needs --steps >= 1");
  const Bundle b = load_bundle(rc);
  const std::size_t h = rc.horizon != 0 ? rc.horizon
                        : rc.horizons.empty() ? 1 : rc.horizons.front();
  const std::string path = checkpoint_path(rc, h);
  if (!std::filesystem::exists(path))
    throw std::runtime_error("no checkpoint at '" + path + "'; run `train` first");
  auto [fc, meta] = epicast::load_checkpoint(path);

  const std::size_t first_day = rc.first_day >= 0 ? static_cast<std::size_t>(rc.first_day) : b.cases.days;
  note("rolling " + std::to_string(rc.steps) + " days from day " + std::to_string(first_day));
  const auto rolled = epicast::autoregressive_forecast(fc, b.cases, b.graph, static_block(b),
                                                       first_day, rc.steps,
                                                       static_cast<std::size_t>(rc.lag));

  std::ostringstream out;
  epicast::write_forecast_csv(out, b.cases, first_day, rolled);
  std::filesystem::create_directories(rc.out);
  const std::string file = rc.out + "/forecast_" + rc.model + "_h" + std::to_string(h) + ".csv";
  write_text_file(file, out.str());
  std::printf("wrote %s (%zu steps x %zu regions)\n", file.c_str(), rolled.size(),
              b.cases.regions.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig rc;

  // The config file is applied before flag parsing so that flags override
  // config values, which override built-in defaults.
  std::string config_path;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc)
      config_path = argv[i + 1];
    else if (arg.rfind("--config=", 0) == 0)
      config_path = arg.substr(9);
  }
  try {
    if (!config_path.empty()) load_config_file(config_path, rc);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  CLI::App app{
      "Region-level epidemic forecasting: graph neural forecasters, statistical baselines,\n"
      "rolling-origin evaluation and autoregressive rollouts.\n"
      "Precedence: command-line flags > --config file > built-in defaults.\n"
      "Set EPICAST_VERBOSE=1 for progress output on stderr."};
  app.fallthrough();
  std::string config_dummy;
  app.add_option("--config", config_dummy, "JSON run configuration file");
  app.add_option("--cases", rc.cases, "case CSV (date,region,status[,count])");
  app.add_option("--adjacency", rc.adjacency, "border list, one `u,v` pair per line");
  app.add_option("--economic", rc.economic, "economic indicator CSV (region,category,value)");
  app.add_option("--mapping", rc.mapping,
                 "health-to-economic region mapping CSV (health_region,economic_region,mode)");
  app.add_option("--out", rc.out, "output directory")->capture_default_str();
  app.add_option("--first-date", rc.first_date, "clip cases before this ISO date");
  app.add_option("--last-date", rc.last_date, "clip cases after this ISO date");
  app.add_option("--model", rc.model, "MPNN, MGNN, MPNN_LSTM or ATMGNN")->capture_default_str();
  app.add_option("--models", rc.eval_models, "predictors for `evaluate` (kinds and baselines)")
      ->delimiter(',');
  app.add_option("--horizons", rc.horizons, "forecast horizons in days")
      ->delimiter(',')
      ->capture_default_str();
  app.add_option("--hidden", rc.hidden, "hidden width per message-passing layer")
      ->capture_default_str();
  app.add_option("--layers", rc.mp_layers, "message-passing layers")->capture_default_str();
  app.add_option("--window", rc.window, "input window of daily counts")->capture_default_str();
  app.add_option("--context", rc.context, "windows per temporal context")->capture_default_str();
  app.add_option("--heads", rc.heads, "attention heads")->capture_default_str();
  app.add_option("--clusters", rc.clusters, "coarse level sizes for multiresolution kinds")
      ->delimiter(',')
      ->capture_default_str();
  app.add_option("--dropout", rc.dropout, "dropout rate")->capture_default_str();
  app.add_flag("--graph-level-readout", rc.graph_level_readout,
               "pool node embeddings before the recurrent stage");
  app.add_option("--max-epochs", rc.max_epochs, "training epochs cap")->capture_default_str();
  app.add_option("--patience", rc.patience, "early-stopping patience")->capture_default_str();
  app.add_option("--patience-start", rc.patience_start, "earliest stopping epoch")
      ->capture_default_str();
  app.add_option("--batch-size", rc.batch_size, "samples per optimizer step")
      ->capture_default_str();
  app.add_option("--lr", rc.learning_rate, "Adam learning rate")->capture_default_str();
  app.add_option("--seed", rc.seed, "master random seed")->capture_default_str();
  app.add_option("--first-origin", rc.first_origin,
                 "first rolling-origin day (0 = derive from the data)")
      ->capture_default_str();
  app.add_option("--origin-step", rc.origin_step, "days between rolling origins")
      ->capture_default_str();
  app.add_option("--val-len", rc.validation_len, "validation days before each origin")
      ->capture_default_str();
  app.add_option("--steps", rc.steps, "days to roll forward")->capture_default_str();
  app.add_option("--lag", rc.lag, "truth feed-in lag in days (0..9)")->capture_default_str();
  app.add_option("--first-day", rc.first_day,
                 "first forecast day index (-1 = first unobserved day)")
      ->capture_default_str();
  app.add_option("--horizon", rc.horizon, "checkpoint horizon to roll (0 = first of --horizons)")
      ->capture_default_str();

  app.require_subcommand(1);
  CLI::App* ingest = app.add_subcommand("ingest", "read raw files into a dataset bundle");
  CLI::App* train = app.add_subcommand("train", "fit one checkpoint per horizon");
  CLI::App* evaluate = app.add_subcommand("evaluate", "rolling-origin metric table");
  CLI::App* baselines =
      app.add_subcommand("baselines", "metric table for the statistical baselines only");
  CLI::App* forecast = app.add_subcommand("forecast", "autoregressive rollout from a checkpoint");

  CLI11_PARSE(app, argc, argv);

  try {
    if (ingest->parsed()) return cmd_ingest(rc);
    if (train->parsed()) return cmd_train(rc);
    if (evaluate->parsed()) return cmd_evaluate(rc, false);
    if (baselines->parsed()) return cmd_evaluate(rc, true);
    if (forecast->parsed()) return cmd_forecast(rc);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
