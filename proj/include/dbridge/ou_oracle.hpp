#pragma once

// Exact Ornstein-Uhlenbeck bridges and their Gaussian marginals.

#include <cmath>
#include <span>
#include <vector>

#include "dbridge/errors.hpp"
#include "dbridge/model.hpp"
#include "dbridge/path.hpp"
#include "dbridge/rng.hpp"

namespace dbridge {

struct OuParams {
  double theta = 0.5;
  double sigma = 1.0;

  OuParams() = default;
  OuParams(double theta_, double sigma_) : theta(theta_), sigma(sigma_) {
    if (!(theta > 0.0) || !(sigma > 0.0)) throw UsageError("OU parameters must be positive");
  }
  explicit OuParams(const OrnsteinUhlenbeck& m) : OuParams(m.theta, m.sigma) {}

  /// Var(X_t | X_0) = sigma^2 (1 - e^{-2 theta t}) / (2 theta).
  double transition_variance(double t) const noexcept {
    return sigma * sigma * -std::expm1(-2.0 * theta * t) / (2.0 * theta);
  }
};

struct GaussianMoments {
  double mean = 0.0;
  double variance = 0.0;
};

/// sinh(theta t) / sinh(theta T), evaluated in the log domain when theta T > 30.
inline double ou_bridge_weight(double theta, double t, double total) {
  if (theta * total > 30.0) {
    return std::exp(theta * (t - total)) * std::expm1(-2.0 * theta * t) /
           std::expm1(-2.0 * theta * total);
  }
  return std::sinh(theta * t) / std::sinh(theta * total);
}

/// Exact OU bridge from x0 at times.front() = 0 to x at times.back(): an
/// unconditioned OU path is generated by its Gaussian recursion and pinned by
/// adding (x - X_T) sinh(theta t) / sinh(theta T). Both endpoints are exact.
inline std::vector<double> sample_ou_bridge_exact(const OuParams& p, double x0, double x,
                                                  std::span<const double> times,
                                                  RandomStream& rng) {
  if (times.size() < 2) throw UsageError("need at least two time points");
  if (times.front() != 0.0) throw UsageError("bridge times must start at 0");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1])) throw UsageError("bridge times must be strictly increasing");

  const std::size_t n = times.size();
  std::vector<double> path(n);
  path[0] = x0;
  for (std::size_t i = 1; i < n; ++i) {
    const double dt = times[i] - times[i - 1];
    const double sd = std::sqrt(p.transition_variance(dt));
    path[i] = std::exp(-p.theta * dt) * path[i - 1] + sd * rng.normal();
  }
  const double total = times.back();
  const double gap = x - path.back();
  for (std::size_t i = 1; i + 1 < n; ++i) path[i] += gap * ou_bridge_weight(p.theta, times[i], total);
  path.back() = x;
  return path;
}

/// Exact bridge on the uniform grid with `steps` steps over [0, horizon].
inline GridPath sample_ou_bridge_exact(const OuParams& p, double a, double b, double horizon,
                                       std::size_t steps, RandomStream& rng) {
  if (steps < 1 || !(horizon > 0.0)) throw UsageError("invalid bridge grid");
  std::vector<double> times(steps + 1);
  const double delta = horizon / static_cast<double>(steps);
  for (std::size_t i = 0; i <= steps; ++i) times[i] = static_cast<double>(i) * delta;
  times.back() = horizon;
  return GridPath(0.0, delta, sample_ou_bridge_exact(p, a, b, times, rng));
}

/// Law of X_t given X_0 = a and X_horizon = b.
///
/// p_t(a, y) p_{horizon - t}(y, b) is a product of two Gaussians in y:
///   precision = 1/v(t) + e^{-2 theta (horizon - t)} / v(horizon - t)
///   mean      = variance * (a e^{-theta t} / v(t) + b e^{-theta (horizon - t)} / v(horizon - t))
/// with v the transition variance.
inline GaussianMoments ou_bridge_marginal(const OuParams& p, double a, double b, double horizon,
                                          double t) {
  if (!(t > 0.0 && t < horizon)) throw UsageError("t must lie strictly inside (0, horizon)");
  const double v1 = p.transition_variance(t);
  const double s = horizon - t;
  const double v2 = p.transition_variance(s);
  const double decay1 = std::exp(-p.theta * t);
  const double decay2 = std::exp(-p.theta * s);
  const double precision = 1.0 / v1 + decay2 * decay2 / v2;
  GaussianMoments out;
  out.variance = 1.0 / precision;
  out.mean = out.variance * (a * decay1 / v1 + b * decay2 / v2);
  return out;
}

}  // namespace dbridge
