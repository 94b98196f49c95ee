#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "epicast/graph.hpp"
#include "epicast/models.hpp"
#include "epicast/tensor.hpp"

namespace epicast {

// ---------------------------------------------------------------------------
// Calendar days

/// A civil calendar date. Daily aggregates only, so there is no time zone
/// or time-of-day handling anywhere.
struct Date {
  int year = 1970;
  unsigned month = 1;
  unsigned day = 1;

  auto operator<=>(const Date&) const = default;
};

/// Days since 1970-01-01 (Howard Hinnant's civil-days algorithm).
inline std::int64_t days_from_civil(const Date& d) {
  const int y = d.year - (d.month <= 2 ? 1 : 0);
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (d.month + (d.month > 2 ? -3 : 9)) + 2) / 5 + d.day - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return static_cast<std::int64_t>(era) * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline Date civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const int y = static_cast<int>(yoe) + static_cast<int>(era) * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp + (mp < 10 ? 3 : -9);
  return {y + (m <= 2 ? 1 : 0), m, d};
}

inline Date advance(const Date& d, std::int64_t days) {
  return civil_from_days(days_from_civil(d) + days);
}

inline std::string to_string(const Date& d) {
  char buf[11];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", d.year, d.month, d.day);
  return buf;
}

/// Strict ISO `YYYY-MM-DD`; rejects impossible dates by round-tripping
/// through the day count.
inline std::optional<Date> parse_date(const std::string& s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u})
    if (s[i] < '0' || s[i] > '9') return std::nullopt;
  const Date d{std::stoi(s.substr(0, 4)), static_cast<unsigned>(std::stoi(s.substr(5, 2))),
               static_cast<unsigned>(std::stoi(s.substr(8, 2)))};
  if (d.month < 1 || d.month > 12 || d.day < 1) return std::nullopt;
  if (civil_from_days(days_from_civil(d)) != d) return std::nullopt;
  return d;
}

// ---------------------------------------------------------------------------
// CSV plumbing

namespace detail {

inline std::string trim(std::string s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
  while (!s.empty() && is_space(s.back())) s.pop_back();
  std::size_t start = 0;
  while (start < s.size() && is_space(s[start])) ++start;
  return s.substr(start);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

[[noreturn]] inline void row_error(const char* file_kind, std::size_t line_no,
                                   const std::string& what) {
  throw std::invalid_argument(std::string(file_kind) + " line " + std::to_string(line_no) + ": " +
                              what);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Case matrix

/// Confirmed case counts per region and calendar day. Days are contiguous
/// from `start`; every (region, day) cell is present, zero where no records
/// fell.
struct CaseMatrix {
  std::vector<std::string> regions;
  Date start;
  std::size_t days = 0;
  std::vector<double> counts;  // region-major, regions.size() x days

  double at(std::size_t region, std::size_t day) const { return counts[region * days + day]; }
  double& at(std::size_t region, std::size_t day) { return counts[region * days + day]; }
  Date date_at(std::size_t day) const { return advance(start, static_cast<std::int64_t>(day)); }

  std::size_t region_index(const std::string& label) const {
    for (std::size_t u = 0; u < regions.size(); ++u)
      if (regions[u] == label) return u;
    throw std::invalid_argument("unknown region '" + label + "'");
  }

  /// Per-region series over days [0, end). The baselines consume this form.
  std::vector<std::vector<double>> history_until(std::size_t end) const {
    std::vector<std::vector<double>> h(regions.size());
    for (std::size_t u = 0; u < regions.size(); ++u)
      h[u].assign(counts.begin() + static_cast<std::ptrdiff_t>(u * days),
                  counts.begin() + static_cast<std::ptrdiff_t>(u * days + end));
    return h;
  }

  double total() const {
    double t = 0.0;
    for (const double c : counts) t += c;
    return t;
  }
};

/// Reads `date,region,status[,count]` rows (header required) into a dense
/// matrix over the configured regions and date range. Only rows with status
/// `confirmed` and a date inside [first, last] are counted; a missing count
/// field means one case. Region labels must come from `regions`; violations
/// report the physical line number.
inline CaseMatrix ingest_cases(std::istream& in, const std::vector<std::string>& regions,
                               const Date& first, const Date& last) {
  if (regions.empty()) throw std::invalid_argument("ingest_cases with no regions");
  if (last < first) throw std::invalid_argument("ingest_cases: empty date range");

  CaseMatrix cm;
  cm.regions = regions;
  cm.start = first;
  cm.days = static_cast<std::size_t>(days_from_civil(last) - days_from_civil(first)) + 1;
  cm.counts.assign(regions.size() * cm.days, 0.0);

  std::map<std::string, std::size_t> index;
  for (std::size_t u = 0; u < regions.size(); ++u) index[regions[u]] = u;

  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = detail::trim(line);
    if (stripped.empty()) continue;
    const std::vector<std::string> fields = detail::split_csv(stripped);
    if (!saw_header) {
      if (fields.size() < 3 || fields[0] != "date" || fields[1] != "region" ||
          fields[2] != "status")
        detail::row_error("case file", line_no, "expected header date,region,status[,count]");
      saw_header = true;
      continue;
    }
    if (fields.size() < 3 || fields.size() > 4)
      detail::row_error("case file", line_no, "expected 3 or 4 fields, found " +
                                                  std::to_string(fields.size()));
    const std::optional<Date> date = parse_date(fields[0]);
    if (!date) detail::row_error("case file", line_no, "unparseable date '" + fields[0] + "'");
    const auto region = index.find(fields[1]);
    if (region == index.end())
      detail::row_error("case file", line_no, "unknown region '" + fields[1] + "'");
    double count = 1.0;
    if (fields.size() == 4 && !fields[3].empty()) {
      try {
        std::size_t used = 0;
        count = std::stod(fields[3], &used);
        if (used != fields[3].size()) throw std::invalid_argument(fields[3]);
      } catch (const std::exception&) {
        detail::row_error("case file", line_no, "bad count '" + fields[3] + "'");
      }
      if (!(count >= 0.0) || count != std::floor(count))
        detail::row_error("case file", line_no, "count must be a nonnegative integer");
    }
    if (fields[2] != "confirmed") continue;
    if (*date < first || last < *date) continue;
    const std::size_t day =
        static_cast<std::size_t>(days_from_civil(*date) - days_from_civil(first));
    cm.at(region->second, day) += count;
  }
  // A stream with no rows at all is a legal, if suspicious, input: it means
  // zero reported cases everywhere.
  return cm;
}

/// Reads a plain edge list, one `u,v` region-label pair per line, no
/// header. Returns index pairs against the given region order.
inline std::vector<std::pair<std::size_t, std::size_t>> read_border_pairs(
    std::istream& in, const std::vector<std::string>& regions) {
  std::map<std::string, std::size_t> index;
  for (std::size_t u = 0; u < regions.size(); ++u) index[regions[u]] = u;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = detail::trim(line);
    if (stripped.empty()) continue;
    const std::vector<std::string> fields = detail::split_csv(stripped);
    if (fields.size() != 2)
      detail::row_error("adjacency file", line_no, "expected u,v region pair");
    for (const std::string& label : fields)
      if (!index.count(label))
        detail::row_error("adjacency file", line_no, "unknown region '" + label + "'");
    pairs.emplace_back(index[fields[0]], index[fields[1]]);
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Economic features

/// Per-region static feature block: one z-normalized value per economic
/// category. Time-constant by construction.
struct EconFeatures {
  std::vector<std::string> categories;
  std::vector<double> values;  // region-major, n x categories.size()

  double at(std::size_t region, std::size_t cat) const {
    return values[region * categories.size() + cat];
  }
};

struct EconRow {
  std::string region, category;
  double value = 0.0;
};

enum class MergeMode { kSum, kAvg };

struct MappingRow {
  std::string health_region, economic_region;
  MergeMode mode = MergeMode::kSum;
};

/// Parses `region,category,value` rows (header required).
inline std::vector<EconRow> read_econ_table(std::istream& in) {
  std::vector<EconRow> rows;
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = detail::trim(line);
    if (stripped.empty()) continue;
    const std::vector<std::string> fields = detail::split_csv(stripped);
    if (!saw_header) {
      if (fields.size() != 3 || fields[0] != "region" || fields[1] != "category" ||
          fields[2] != "value")
        detail::row_error("economic file", line_no, "expected header region,category,value");
      saw_header = true;
      continue;
    }
    if (fields.size() != 3)
      detail::row_error("economic file", line_no, "expected 3 fields");
    try {
      std::size_t used = 0;
      const double v = std::stod(fields[2], &used);
      if (used != fields[2].size()) throw std::invalid_argument(fields[2]);
      rows.push_back({fields[0], fields[1], v});
    } catch (const std::exception&) {
      detail::row_error("economic file", line_no, "bad value '" + fields[2] + "'");
    }
  }
  return rows;
}

/// Parses `health_region,economic_region,mode` rows (header required,
/// mode is `sum` or `avg`).
inline std::vector<MappingRow> read_mapping_table(std::istream& in) {
  std::vector<MappingRow> rows;
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = detail::trim(line);
    if (stripped.empty()) continue;
    const std::vector<std::string> fields = detail::split_csv(stripped);
    if (!saw_header) {
      if (fields.size() != 3 || fields[0] != "health_region" || fields[1] != "economic_region" ||
          fields[2] != "mode")
        detail::row_error("mapping file", line_no,
                          "expected header health_region,economic_region,mode");
      saw_header = true;
      continue;
    }
    if (fields.size() != 3)
      detail::row_error("mapping file", line_no, "expected 3 fields");
    MergeMode mode;
    if (fields[2] == "sum")
      mode = MergeMode::kSum;
    else if (fields[2] == "avg")
      mode = MergeMode::kAvg;
    else
      detail::row_error("mapping file", line_no, "mode must be sum or avg, found '" + fields[2] +
                                                     "'");
    rows.push_back({fields[0], fields[1], mode});
  }
  return rows;
}

/// Combines economic-region category vectors onto health regions (sum or
/// average per the mapping), then z-normalizes each category across
/// regions. Constant categories normalize to all zeros. Every health region
/// must be mapped to at least one economic region.
inline EconFeatures merge_economic(const std::vector<std::string>& health_regions,
                                   const std::vector<EconRow>& econ,
                                   const std::vector<MappingRow>& mapping) {
  std::set<std::string> category_set;
  std::map<std::string, std::map<std::string, double>> by_econ_region;
  for (const EconRow& row : econ) {
    category_set.insert(row.category);
    auto [it, inserted] = by_econ_region[row.region].emplace(row.category, row.value);
    if (!inserted)
      throw std::invalid_argument("duplicate economic entry for (" + row.region + ", " +
                                  row.category + ")");
  }

  EconFeatures features;
  features.categories.assign(category_set.begin(), category_set.end());
  const std::size_t c = features.categories.size();
  const std::size_t n = health_regions.size();
  features.values.assign(n * c, 0.0);

  for (std::size_t u = 0; u < n; ++u) {
    std::vector<const MappingRow*> matched;
    for (const MappingRow& row : mapping)
      if (row.health_region == health_regions[u]) matched.push_back(&row);
    if (matched.empty())
      throw std::invalid_argument("health region '" + health_regions[u] +
                                  "' has no economic mapping");
    for (const MappingRow* row : matched) {
      if (row->mode != matched.front()->mode)
        throw std::invalid_argument("health region '" + health_regions[u] +
                                    "' mixes sum and avg mapping modes");
      const auto econ_it = by_econ_region.find(row->economic_region);
      if (econ_it == by_econ_region.end())
        throw std::invalid_argument("economic region '" + row->economic_region +
                                    "' missing from the economic table");
      for (std::size_t j = 0; j < c; ++j) {
        const auto value_it = econ_it->second.find(features.categories[j]);
        if (value_it != econ_it->second.end()) features.values[u * c + j] += value_it->second;
      }
    }
    if (matched.front()->mode == MergeMode::kAvg)
      for (std::size_t j = 0; j < c; ++j)
        features.values[u * c + j] /= static_cast<double>(matched.size());
  }

  // z-normalize per category across regions; population standard deviation.
  for (std::size_t j = 0; j < c; ++j) {
    double mean = 0.0;
    for (std::size_t u = 0; u < n; ++u) mean += features.values[u * c + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t u = 0; u < n; ++u) {
      const double d = features.values[u * c + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);
    for (std::size_t u = 0; u < n; ++u) {
      double& v = features.values[u * c + j];
      v = sd > 0.0 ? (v - mean) / sd : 0.0;
    }
  }
  return features;
}

// ---------------------------------------------------------------------------
// Supervised windows

/// One training example: `context` consecutive feature windows (each row u
/// holds region u's last `window` daily counts plus any static block) and
/// the per-region counts `horizon` days past the anchor.
struct SupervisedSample {
  std::size_t anchor = 0;  // day index of the last input day
  std::size_t target_day = 0;
  std::vector<NodeFeatureWindow> windows;
  Tensor target;
};

struct SupervisedSet {
  std::size_t window = 0, horizon = 0, context = 0;
  std::vector<SupervisedSample> samples;
};

/// One sample per anchor day with full context and an observed target.
/// Inputs never reach the target day: every input day index stays strictly
/// below anchor + horizon.
inline SupervisedSet build_windows(const CaseMatrix& cm, std::size_t window, std::size_t horizon,
                                   std::size_t context, const EconFeatures* econ = nullptr) {
  if (window == 0 || horizon == 0 || context == 0)
    throw std::invalid_argument("build_windows needs window, horizon, context >= 1");
  const std::size_t lead = window + context - 1;  // days consumed by one full context
  if (cm.days < lead + horizon)
    throw std::invalid_argument("build_windows: " + std::to_string(cm.days) +
                                " days cannot fit window " + std::to_string(window) +
                                ", context " + std::to_string(context) + " and horizon " +
                                std::to_string(horizon));
  const std::size_t n = cm.regions.size();
  const std::size_t static_cols = econ ? econ->categories.size() : 0;

  SupervisedSet set;
  set.window = window;
  set.horizon = horizon;
  set.context = context;
  for (std::size_t anchor = lead - 1; anchor + horizon < cm.days; ++anchor) {
    SupervisedSample sample;
    sample.anchor = anchor;
    sample.target_day = anchor + horizon;
    for (std::size_t w = 0; w < context; ++w) {
      const std::size_t end = anchor - (context - 1) + w;  // last day of this window
      std::vector<double> x(n * (window + static_cols));
      for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t j = 0; j < window; ++j)
          x[u * (window + static_cols) + j] = cm.at(u, end - window + 1 + j);
        for (std::size_t j = 0; j < static_cols; ++j)
          x[u * (window + static_cols) + window + j] = econ->at(u, j);
      }
      sample.windows.push_back(
          {Tensor::matrix(n, window + static_cols, std::move(x)), end, window});
    }
    std::vector<double> y(n);
    for (std::size_t u = 0; u < n; ++u) y[u] = cm.at(u, sample.target_day);
    sample.target = Tensor::wrap({n}, std::move(y));
    set.samples.push_back(std::move(sample));
  }
  return set;
}

// ---------------------------------------------------------------------------
// Rolling-origin splits

/// One evaluation origin: the model trains on targets up to
/// `train_target_end`, validates on targets in (train_target_end, origin],
/// and is tested on the single day origin + horizon. All indices are day
/// positions in the CaseMatrix.
struct RollingSplit {
  std::size_t origin = 0;
  std::size_t train_target_end = 0;  // inclusive
  std::size_t test_target = 0;
};

/// Origins advance from `first_origin` by `step` while the test target
/// stays observed. Training sets grow with the origin; validation and test
/// days never overlap by construction (validation ends at the origin, the
/// test target lies `horizon` days past it).
inline std::vector<RollingSplit> rolling_splits(std::size_t total_days, std::size_t first_origin,
                                                std::size_t step, std::size_t validation_len,
                                                std::size_t horizon) {
  if (step == 0) throw std::invalid_argument("rolling_splits: step must be >= 1");
  if (validation_len == 0) throw std::invalid_argument("rolling_splits: empty validation window");
  if (first_origin <= validation_len)
    throw std::invalid_argument("rolling_splits: origin " + std::to_string(first_origin) +
                                " leaves no training targets before a " +
                                std::to_string(validation_len) + "-day validation window");
  if (first_origin + horizon >= total_days)
    throw std::invalid_argument("rolling_splits: first test target at day " +
                                std::to_string(first_origin + horizon) + " is past the data (" +
                                std::to_string(total_days) + " days)");
  std::vector<RollingSplit> splits;
  for (std::size_t origin = first_origin; origin + horizon < total_days; origin += step)
    splits.push_back({origin, origin - validation_len, origin + horizon});
  return splits;
}

struct SplitIndices {
  std::vector<std::size_t> train, validation, test;
};

/// Buckets samples of a SupervisedSet by target day against one rolling
/// split. Samples beyond the split's reach fall out entirely.
inline SplitIndices assign_split(const SupervisedSet& set, const RollingSplit& split) {
  SplitIndices out;
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    const std::size_t target = set.samples[i].target_day;
    if (target <= split.train_target_end)
      out.train.push_back(i);
    else if (target <= split.origin)
      out.validation.push_back(i);
    else if (target == split.test_target)
      out.test.push_back(i);
  }
  return out;
}

}  // namespace epicast
