#pragma once

#include <cmath>
#include <concepts>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>

#include "dbridge/errors.hpp"

namespace dbridge {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Open state interval (lower, upper); either end may be infinite.
struct Interval {
  double lower = -kInf;
  double upper = kInf;

  bool contains(double x) const noexcept { return x > lower && x < upper; }
  bool bounded_below() const noexcept { return std::isfinite(lower); }
  bool bounded_above() const noexcept { return std::isfinite(upper); }
};

/// A time-homogeneous scalar diffusion dX = drift(X) dt + diffusion(X) dW.
template <class M>
concept Diffusion = requires(const M& m, double x) {
  { m.drift(x) } -> std::convertible_to<double>;
  { m.diffusion(x) } -> std::convertible_to<double>;
  { m.diffusion_deriv(x) } -> std::convertible_to<double>;
  { m.state_interval() } -> std::convertible_to<Interval>;
  { m.reference_point() } -> std::convertible_to<double>;
};

template <class M>
concept HasDiffusionSecondDeriv = Diffusion<M> && requires(const M& m, double x) {
  { m.diffusion_second_deriv(x) } -> std::convertible_to<double>;
};

template <class M>
concept HasStationaryDensity = Diffusion<M> && requires(const M& m, double x) {
  { m.stationary_density(x) } -> std::convertible_to<double>;
};

template <class M>
concept HasTransitionDensity = Diffusion<M> && requires(const M& m, double t, double x, double y) {
  { m.transition_density(t, x, y) } -> std::convertible_to<double>;
};

/// sigma''(x); central difference of sigma' with step 1e-5 * max(1, |x|) when the
/// model does not supply it.
template <Diffusion M>
double diffusion_second_derivative(const M& m, double x) {
  if constexpr (HasDiffusionSecondDeriv<M>) {
    return m.diffusion_second_deriv(x);
  } else {
    const double h = 1e-5 * std::max(1.0, std::fabs(x));
    return (m.diffusion_deriv(x + h) - m.diffusion_deriv(x - h)) / (2.0 * h);
  }
}

inline double normal_density(double x, double mean, double variance) {
  const double z = x - mean;
  return std::exp(-0.5 * z * z / variance) / std::sqrt(2.0 * std::numbers::pi * variance);
}

/// dX = -theta X dt + sigma dW.
struct OrnsteinUhlenbeck {
  double theta = 0.5;
  double sigma = 1.0;

  OrnsteinUhlenbeck() = default;
  OrnsteinUhlenbeck(double theta_, double sigma_) : theta(theta_), sigma(sigma_) {
    if (!(theta > 0.0) || !(sigma > 0.0)) throw UsageError("ou: theta and sigma must be positive");
  }

  double drift(double x) const noexcept { return -theta * x; }
  double diffusion(double) const noexcept { return sigma; }
  double diffusion_deriv(double) const noexcept { return 0.0; }
  double diffusion_second_deriv(double) const noexcept { return 0.0; }
  Interval state_interval() const noexcept { return {}; }
  double reference_point() const noexcept { return 0.0; }

  /// Variance of X_t given X_0.
  double transition_variance(double t) const noexcept {
    return sigma * sigma * -std::expm1(-2.0 * theta * t) / (2.0 * theta);
  }
  double transition_density(double t, double x, double y) const noexcept {
    return normal_density(y, x * std::exp(-theta * t), transition_variance(t));
  }
  double stationary_density(double x) const noexcept {
    return normal_density(x, 0.0, sigma * sigma / (2.0 * theta));
  }
};

/// dX = -theta X / sqrt(1 + X^2) dt + sigma dW; stationary law is the
/// symmetric hyperbolic distribution.
struct Hyperbolic {
  double theta = 1.0;
  double sigma = 1.0;

  Hyperbolic() = default;
  Hyperbolic(double theta_, double sigma_) : theta(theta_), sigma(sigma_) {
    if (!(theta > 0.0) || !(sigma > 0.0))
      throw UsageError("hyperbolic: theta and sigma must be positive");
  }

  double drift(double x) const noexcept { return -theta * x / std::sqrt(1.0 + x * x); }
  double diffusion(double) const noexcept { return sigma; }
  double diffusion_deriv(double) const noexcept { return 0.0; }
  double diffusion_second_deriv(double) const noexcept { return 0.0; }
  Interval state_interval() const noexcept { return {}; }
  double reference_point() const noexcept { return 0.0; }

  double stationary_density(double x) const {
    const double c = 2.0 * theta / (sigma * sigma);
    return std::exp(-c * std::sqrt(1.0 + x * x)) / (2.0 * std::cyl_bessel_k(1.0, c));
  }
};

/// dX = kappa (mu - X) dt + sigma sqrt(X) dW on (0, inf).
struct SquareRootDiffusion {
  double kappa = 1.0;
  double mu = 1.0;
  double sigma = 1.0;

  SquareRootDiffusion() = default;
  SquareRootDiffusion(double kappa_, double mu_, double sigma_)
      : kappa(kappa_), mu(mu_), sigma(sigma_) {
    if (!(kappa > 0.0) || !(mu > 0.0) || !(sigma > 0.0))
      throw UsageError("cir: kappa, mu and sigma must be positive");
  }

  double drift(double x) const noexcept { return kappa * (mu - x); }
  double diffusion(double x) const noexcept { return sigma * std::sqrt(x); }
  double diffusion_deriv(double x) const noexcept { return 0.5 * sigma / std::sqrt(x); }
  double diffusion_second_deriv(double x) const noexcept {
    return -0.25 * sigma / (x * std::sqrt(x));
  }
  Interval state_interval() const noexcept { return {0.0, kInf}; }
  double reference_point() const noexcept { return mu; }

  /// Gamma(shape 2 kappa mu / sigma^2, rate 2 kappa / sigma^2).
  double stationary_density(double x) const {
    if (x <= 0.0) return 0.0;
    const double rate = 2.0 * kappa / (sigma * sigma);
    const double shape = rate * mu;
    return std::exp(shape * std::log(rate) + (shape - 1.0) * std::log(x) - rate * x -
                    std::lgamma(shape));
  }
};

/// Type-erased diffusion for user-supplied coefficient callbacks.
class DiffusionModel {
 public:
  using Fn = std::function<double(double)>;

  struct Coefficients {
    Fn drift;
    Fn diffusion;
    Fn diffusion_deriv;
    Fn diffusion_second_deriv;  // optional
  };

  DiffusionModel(std::string name, Coefficients coefficients, Interval interval,
                 double reference_point)
      : name_(std::move(name)),
        coef_(std::move(coefficients)),
        interval_(interval),
        reference_point_(reference_point) {
    if (!coef_.drift || !coef_.diffusion || !coef_.diffusion_deriv)
      throw UsageError("model '" + name_ + "' needs drift, diffusion and diffusion_deriv");
    if (!(interval_.lower < interval_.upper)) throw UsageError("empty state interval");
    if (!interval_.contains(reference_point_))
      throw UsageError("reference point must lie strictly inside the state interval");
    if (!(coef_.diffusion(reference_point_) > 0.0))
      throw ModelError("diffusion coefficient must be positive at the reference point");
  }

  /// Wraps any built-in model, keeping its stationary/transition densities.
  template <Diffusion M>
  static DiffusionModel wrap(std::string name, M m) {
    Coefficients c{[m](double x) { return m.drift(x); }, [m](double x) { return m.diffusion(x); },
                   [m](double x) { return m.diffusion_deriv(x); }, {}};
    if constexpr (HasDiffusionSecondDeriv<M>)
      c.diffusion_second_deriv = [m](double x) { return m.diffusion_second_deriv(x); };
    DiffusionModel out(std::move(name), std::move(c), m.state_interval(), m.reference_point());
    if constexpr (HasStationaryDensity<M>)
      out.stationary_ = [m](double x) { return m.stationary_density(x); };
    if constexpr (HasTransitionDensity<M>)
      out.transition_ = [m](double t, double x, double y) { return m.transition_density(t, x, y); };
    return out;
  }

  const std::string& name() const noexcept { return name_; }
  double drift(double x) const { return coef_.drift(x); }
  double diffusion(double x) const { return coef_.diffusion(x); }
  double diffusion_deriv(double x) const { return coef_.diffusion_deriv(x); }
  double diffusion_second_deriv(double x) const {
    if (coef_.diffusion_second_deriv) return coef_.diffusion_second_deriv(x);
    const double h = 1e-5 * std::max(1.0, std::fabs(x));
    return (diffusion_deriv(x + h) - diffusion_deriv(x - h)) / (2.0 * h);
  }
  Interval state_interval() const noexcept { return interval_; }
  double reference_point() const noexcept { return reference_point_; }

  bool has_stationary_density() const noexcept { return static_cast<bool>(stationary_); }
  bool has_transition_density() const noexcept { return static_cast<bool>(transition_); }
  std::optional<double> stationary_density(double x) const {
    if (!stationary_) return std::nullopt;
    return stationary_(x);
  }
  std::optional<double> transition_density(double t, double x, double y) const {
    if (!transition_) return std::nullopt;
    return transition_(t, x, y);
  }

  DiffusionModel& set_stationary_density(std::function<double(double)> f) {
    stationary_ = std::move(f);
    return *this;
  }
  DiffusionModel& set_transition_density(std::function<double(double, double, double)> f) {
    transition_ = std::move(f);
    return *this;
  }

 private:
  std::string name_;
  Coefficients coef_;
  Interval interval_;
  double reference_point_;
  std::function<double(double)> stationary_;
  std::function<double(double, double, double)> transition_;
};

}  // namespace dbridge
