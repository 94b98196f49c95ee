#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace epicast {

/// Per-region, day-indexed case counts up to the prediction date. Outer
/// index region, inner index day; every region covers the same contiguous
/// day range.
using History = std::vector<std::vector<double>>;

namespace detail {

inline const std::vector<double>& history_row(const History& h, std::size_t region,
                                              const char* op) {
  if (region >= h.size())
    throw std::invalid_argument(std::string(op) + ": region " + std::to_string(region) +
                                " out of range for " + std::to_string(h.size()) + " regions");
  const std::vector<double>& row = h[region];
  if (row.empty()) throw std::invalid_argument(std::string(op) + " on empty history");
  return row;
}

}  // namespace detail

/// Mean of all past days; the same value regardless of horizon.
inline double avg_baseline(const History& h, std::size_t region) {
  const std::vector<double>& row = detail::history_row(h, region, "avg_baseline");
  double total = 0.0;
  for (const double v : row) total += v;
  return total / static_cast<double>(row.size());
}

/// Mean of the last `window` days.
inline double avg_window_baseline(const History& h, std::size_t region, std::size_t window) {
  const std::vector<double>& row = detail::history_row(h, region, "avg_window_baseline");
  if (window == 0 || window > row.size())
    throw std::invalid_argument("avg_window_baseline window " + std::to_string(window) +
                                " for history of " + std::to_string(row.size()) + " days");
  double total = 0.0;
  for (std::size_t i = row.size() - window; i < row.size(); ++i) total += row[i];
  return total / static_cast<double>(window);
}

/// The final observation.
inline double last_day_baseline(const History& h, std::size_t region) {
  return detail::history_row(h, region, "last_day_baseline").back();
}

namespace detail {

/// Cholesky factorization in place; returns false on a non-positive pivot
/// (rank deficiency), leaving the caller to re-solve with a ridge term.
inline bool cholesky(std::vector<double>& a, std::size_t p) {
  for (std::size_t j = 0; j < p; ++j) {
    double d = a[j * p + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * p + k] * a[j * p + k];
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    const double root = std::sqrt(d);
    a[j * p + j] = root;
    for (std::size_t i = j + 1; i < p; ++i) {
      double s = a[i * p + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * p + k] * a[j * p + k];
      a[i * p + j] = s / root;
    }
  }
  return true;
}

/// Solves L Lᵀ x = b with the factor produced by cholesky().
inline std::vector<double> cholesky_solve(const std::vector<double>& l, std::size_t p,
                                          std::vector<double> b) {
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t k = 0; k < i; ++k) b[i] -= l[i * p + k] * b[k];
    b[i] /= l[i * p + i];
  }
  for (std::size_t ii = p; ii > 0; --ii) {
    const std::size_t i = ii - 1;
    for (std::size_t k = i + 1; k < p; ++k) b[i] -= l[k * p + i] * b[k];
    b[i] /= l[i * p + i];
  }
  return b;
}

/// Least-squares coefficients over the design [features | 1]: solves
/// (XᵀX + λI)β = Xᵀy with λ=0 while the normal equations stay positive
/// definite, λ=1e-8 on rank deficiency. Returns p feature weights followed
/// by the intercept.
inline std::vector<double> linreg_fit(const std::vector<std::vector<double>>& features,
                                      std::span<const double> targets) {
  const std::size_t m = features.size();
  if (m < 1) throw std::invalid_argument("linreg_fit_predict with no samples");
  const std::size_t p = features.front().size();
  if (targets.size() != m)
    throw std::invalid_argument("linreg_fit_predict: " + std::to_string(m) + " rows vs " +
                                std::to_string(targets.size()) + " targets");
  if (m < p) throw std::invalid_argument("linreg_fit_predict underdetermined: m < p");
  const std::size_t q = p + 1;  // intercept column

  std::vector<double> gram(q * q, 0.0), rhs(q, 0.0);
  auto entry = [&](const std::vector<double>& row, std::size_t j) {
    return j < p ? row[j] : 1.0;
  };
  for (std::size_t r = 0; r < m; ++r) {
    const std::vector<double>& row = features[r];
    if (row.size() != p) throw std::invalid_argument("linreg_fit_predict ragged feature rows");
    for (std::size_t i = 0; i < q; ++i) {
      for (std::size_t j = i; j < q; ++j) gram[i * q + j] += entry(row, i) * entry(row, j);
      rhs[i] += entry(row, i) * targets[r];
    }
  }
  for (std::size_t i = 0; i < q; ++i)
    for (std::size_t j = 0; j < i; ++j) gram[i * q + j] = gram[j * q + i];

  std::vector<double> factor = gram;
  if (!cholesky(factor, q)) {
    factor = gram;
    for (std::size_t i = 0; i < q; ++i) factor[i * q + i] += 1e-8;
    if (!cholesky(factor, q))
      throw std::runtime_error("linreg_fit_predict: normal equations not solvable");
  }
  return cholesky_solve(factor, q, rhs);
}

}  // namespace detail

/// Ordinary least squares with an intercept; returns queryᵀβ plus the
/// intercept. See detail::linreg_fit for the ridge fallback.
inline double linreg_fit_predict(const std::vector<std::vector<double>>& features,
                                 std::span<const double> targets, std::span<const double> query) {
  const std::vector<double> beta = detail::linreg_fit(features, targets);
  if (query.size() + 1 != beta.size())
    throw std::invalid_argument("linreg_fit_predict: query width " + std::to_string(query.size()) +
                                " vs " + std::to_string(beta.size() - 1) + " features");
  double pred = beta.back();
  for (std::size_t j = 0; j < query.size(); ++j) pred += query[j] * beta[j];
  return pred;
}

/// The LIN_REG reference predictor: one pooled regression across regions,
/// features are each region's last `window` daily counts, target the count
/// `horizon` days later. Returns one prediction per region for the day
/// `horizon` days past the end of the history.
inline std::vector<double> linreg_baseline(const History& h, std::size_t window,
                                           std::size_t horizon) {
  if (h.empty()) throw std::invalid_argument("linreg_baseline on empty history");
  if (window == 0 || horizon == 0)
    throw std::invalid_argument("linreg_baseline needs window >= 1 and horizon >= 1");
  std::vector<std::vector<double>> features;
  std::vector<double> targets;
  for (const std::vector<double>& row : h) {
    if (row.size() != h.front().size())
      throw std::invalid_argument("linreg_baseline: regions disagree on history length");
    if (row.size() < window + horizon) continue;
    for (std::size_t t = window - 1; t + horizon < row.size(); ++t) {
      features.push_back(std::vector<double>(row.begin() + (t - window + 1),
                                             row.begin() + t + 1));
      targets.push_back(row[t + horizon]);
    }
  }
  if (features.size() <= window)
    throw std::invalid_argument("linreg_baseline: history too short to pool " +
                                std::to_string(window) + "-day windows");
  const std::vector<double> beta = detail::linreg_fit(features, targets);

  std::vector<double> preds;
  preds.reserve(h.size());
  for (const std::vector<double>& row : h) {
    double pred = beta.back();
    for (std::size_t j = 0; j < window; ++j) pred += row[row.size() - window + j] * beta[j];
    preds.push_back(pred);
  }
  return preds;
}

}  // namespace epicast
