#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>

namespace epicast {

namespace detail {

inline void require_paired(std::span<const double> preds, std::span<const double> truths,
                           const char* op) {
  if (preds.size() != truths.size())
    throw std::invalid_argument(std::string(op) + " length mismatch: " +
                                std::to_string(preds.size()) + " vs " +
                                std::to_string(truths.size()));
  if (preds.empty()) throw std::invalid_argument(std::string(op) + " on empty vectors");
}

}  // namespace detail

/// Mean absolute error, (1/N)·Σ|ŷ−y|.
inline double mae(std::span<const double> preds, std::span<const double> truths) {
  detail::require_paired(preds, truths, "mae");
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) total += std::abs(preds[i] - truths[i]);
  return total / static_cast<double>(preds.size());
}

/// Root mean squared error, sqrt(Σ(ŷ−y)²/N). Never below mae on the same pair.
inline double rmse(std::span<const double> preds, std::span<const double> truths) {
  detail::require_paired(preds, truths, "rmse");
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - truths[i];
    total += d * d;
  }
  return std::sqrt(total / static_cast<double>(preds.size()));
}

/// Coefficient of determination, 1 − Σ(ŷ−y)²/Σ(ȳ−y)². Exactly 1 for perfect
/// predictions and exactly 0 for the constant predictor at the truth mean;
/// undefined (error) when the truths carry no variance.
inline double r2(std::span<const double> preds, std::span<const double> truths) {
  detail::require_paired(preds, truths, "r2");
  double mean = 0.0;
  for (const double y : truths) mean += y;
  mean /= static_cast<double>(truths.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double r = preds[i] - truths[i];
    const double c = truths[i] - mean;
    ss_res += r * r;
    ss_tot += c * c;
  }
  if (ss_tot == 0.0) throw std::invalid_argument("r2 undefined for constant truths");
  return 1.0 - ss_res / ss_tot;
}

/// Ordinary least-squares slope of metric values against horizons,
/// cov(h, v) / var(h). At least two points, horizons not all equal.
inline double decay_slope(std::span<const double> horizons, std::span<const double> values) {
  if (horizons.size() != values.size())
    throw std::invalid_argument("decay_slope length mismatch");
  if (horizons.size() < 2) throw std::invalid_argument("decay_slope needs at least 2 points");
  const double n = static_cast<double>(horizons.size());
  double hm = 0.0, vm = 0.0;
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    hm += horizons[i];
    vm += values[i];
  }
  hm /= n;
  vm /= n;
  double cov = 0.0, var = 0.0;
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    cov += (horizons[i] - hm) * (values[i] - vm);
    var += (horizons[i] - hm) * (horizons[i] - hm);
  }
  if (var == 0.0) throw std::invalid_argument("decay_slope needs distinct horizons");
  return cov / var;
}

}  // namespace epicast
