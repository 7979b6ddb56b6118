#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/distributions/normal.hpp>

namespace bma {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0); }

/// Upper tail 1 - Phi(x) without cancellation.
inline double norm_sf(double x) { return 0.5 * std::erfc(x * std::numbers::sqrt2 / 2.0); }

inline double norm_logpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -kLogSqrt2Pi - std::log(sd) - 0.5 * z * z;
}

inline double norm_quantile(double p) {
  static const boost::math::normal_distribution<double> n01;
  return boost::math::quantile(n01, p);
}

inline double log_sum_exp(std::span<const double> xs) {
  double m = -kInf;
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

inline double log_add_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline double mean(std::span<const double> xs) {
  if (xs.empty()) return kNaN;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// Sample variance with divisor n - 1.
inline double variance(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size() - 1);
}

inline double stddev(std::span<const double> xs) { return std::sqrt(variance(xs)); }

/// Quantile of an ascending-sorted sample, linear interpolation between order
/// statistics (Hyndman & Fan type 7).
inline double sorted_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) return kNaN;
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::vector<double> xs, double q) {
  std::sort(xs.begin(), xs.end());
  return sorted_quantile(xs, q);
}

inline double logistic(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

/// log(logistic(z)), stable for large |z|.
inline double log_logistic(double z) {
  return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

}  // namespace bma
