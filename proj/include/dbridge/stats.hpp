#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dbridge/errors.hpp"

namespace dbridge {

struct SampleSet {
  std::vector<double> values;
  std::string label;
  std::map<std::string, std::string> metadata;

  SampleSet() = default;
  explicit SampleSet(std::vector<double> v, std::string name = {})
      : values(std::move(v)), label(std::move(name)) {
    if (values.empty()) throw UsageError("sample set '" + label + "' is empty");
  }
};

inline double mean(std::span<const double> x) {
  if (x.empty()) throw UsageError("mean of an empty sample");
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

/// Unbiased sample variance.
inline double variance(std::span<const double> x) {
  if (x.size() < 2) throw UsageError("variance needs at least two values");
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

inline double std_error_of_mean(std::span<const double> x) {
  return std::sqrt(variance(x) / static_cast<double>(x.size()));
}

/// Standard error of the unbiased sample variance from the fourth central moment.
inline double std_error_of_variance(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  const double m = mean(x);
  double m2 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d2 = (v - m) * (v - m);
    m2 += d2;
    m4 += d2 * d2;
  }
  m2 /= n;
  m4 /= n;
  const double s2 = m2 * n / (n - 1.0);
  return std::sqrt(std::max(0.0, (m4 - s2 * s2 * (n - 3.0) / (n - 1.0)) / n));
}

/// Kolmogorov survival function Q(lambda) = P(K > lambda).
inline double kolmogorov_q(double lambda) {
  if (!(lambda > 0.0)) return 1.0;
  if (lambda < 1.18) {
    // P(K <= l) = sqrt(2 pi) / l * sum_k exp(-(2k-1)^2 pi^2 / (8 l^2))
    const double c = std::numbers::pi * std::numbers::pi / (8.0 * lambda * lambda);
    double sum = 0.0;
    for (int k = 1; k <= 20; ++k) {
      const double term = std::exp(-static_cast<double>((2 * k - 1) * (2 * k - 1)) * c);
      sum += term;
      if (term < 1e-17 * sum) break;
    }
    return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * sum, 0.0, 1.0);
  }
  double sum = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += sign * term;
    if (term < 1e-17) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
inline KsResult ks_two_sample(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) throw UsageError("KS test needs two nonempty samples");
  std::vector<double> a(x.begin(), x.end()), b(y.begin(), y.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double n = static_cast<double>(a.size());
  const double m = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  KsResult r;
  r.statistic = d;
  r.p_value = kolmogorov_q(std::sqrt(n * m / (n + m)) * d);
  return r;
}

inline KsResult ks_two_sample(const SampleSet& x, const SampleSet& y) {
  return ks_two_sample(x.values, y.values);
}

/// Linear-interpolation quantile of sorted data (the common "type 7" rule).
inline double quantile_sorted(std::span<const double> sorted, double level) {
  if (sorted.empty()) throw UsageError("quantile of an empty sample");
  if (!(level >= 0.0 && level <= 1.0)) throw UsageError("quantile level outside [0, 1]");
  const double h = level * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Paired empirical quantiles at levels (i - 0.5) / n_quantiles.
inline std::vector<std::pair<double, double>> qq_data(std::span<const double> x,
                                                      std::span<const double> y,
                                                      std::size_t n_quantiles) {
  if (n_quantiles < 1) throw UsageError("qq_data needs at least one quantile");
  std::vector<double> a(x.begin(), x.end()), b(y.begin(), y.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<std::pair<double, double>> out(n_quantiles);
  for (std::size_t i = 0; i < n_quantiles; ++i) {
    const double level = (static_cast<double>(i) + 0.5) / static_cast<double>(n_quantiles);
    out[i] = {quantile_sorted(a, level), quantile_sorted(b, level)};
  }
  return out;
}

/// Sample autocorrelations at lags 0..max_lag, normalized by the lag-0 sum.
/// A constant series gives 1 at lag 0 and 0 elsewhere.
inline std::vector<double> acf(std::span<const double> series, std::size_t max_lag) {
  if (series.size() <= max_lag) throw UsageError("acf: series shorter than max_lag + 1");
  const double m = mean(series);
  const std::size_t n = series.size();
  std::vector<double> centered(n);
  for (std::size_t i = 0; i < n; ++i) centered[i] = series[i] - m;
  double c0 = 0.0;
  for (double v : centered) c0 += v * v;
  std::vector<double> out(max_lag + 1, 0.0);
  out[0] = 1.0;
  if (c0 == 0.0) return out;
  for (std::size_t k = 1; k <= max_lag; ++k) {
    double ck = 0.0;
    for (std::size_t i = 0; i + k < n; ++i) ck += centered[i] * centered[i + k];
    out[k] = ck / c0;
  }
  return out;
}

struct LinearFit {
  double intercept = 0.0;
  double slope = 0.0;
  double r_squared = 0.0;
};

/// Ordinary least squares of y on x.
inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw UsageError("linear_fit needs two equal-length series");
  const double mx = mean(x), my = mean(y);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw ConditioningError("linear_fit: constant regressor");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return f;
}

}  // namespace dbridge
