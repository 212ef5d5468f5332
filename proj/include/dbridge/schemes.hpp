#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "dbridge/errors.hpp"
#include "dbridge/model.hpp"
#include "dbridge/path.hpp"
#include "dbridge/rng.hpp"

namespace dbridge {

enum class Scheme { euler, milstein };

inline Scheme parse_scheme(std::string_view s) {
  if (s == "euler") return Scheme::euler;
  if (s == "milstein") return Scheme::milstein;
  throw UsageError("unknown scheme '" + std::string(s) + "' (expected euler or milstein)");
}

inline const char* to_string(Scheme s) { return s == Scheme::euler ? "euler" : "milstein"; }

/// Default number of steps per unit time.
inline constexpr double kStepsPerUnitTime = 100.0;

namespace detail {

template <Diffusion M>
inline double scheme_step(const M& m, double x, double delta, double sqrt_delta, bool milstein,
                          double xi) {
  const double s = m.diffusion(x);
  double next = x + m.drift(x) * delta + s * sqrt_delta * xi;
  if (milstein) next += 0.5 * s * m.diffusion_deriv(x) * delta * (xi * xi - 1.0);
  return next;
}

struct Excursion {
  std::size_t step;
  double value;
};

/// Fills out[1..] from out[0]; returns the first step that left the state
/// interval, if any. The remaining entries are then unspecified.
template <Diffusion M>
std::optional<Excursion> simulate_into(const M& m, double delta, Scheme scheme,
                                         RandomStream& rng, std::span<double> out) {
  const Interval iv = m.state_interval();
  const double sqrt_delta = std::sqrt(delta);
  const bool milstein = scheme == Scheme::milstein;
  double x = out[0];
  for (std::size_t i = 1; i < out.size(); ++i) {
    x = scheme_step(m, x, delta, sqrt_delta, milstein, rng.normal());
    if (!(x > iv.lower && x < iv.upper)) return Excursion{i, x};
    out[i] = x;
  }
  return std::nullopt;
}

/// Advances `steps` steps from x without storing; nullopt if the path left
/// the state interval.
template <Diffusion M>
std::optional<double> advance(const M& m, double x, double delta, std::size_t steps, Scheme scheme,
                              RandomStream& rng) {
  const Interval iv = m.state_interval();
  const double sqrt_delta = std::sqrt(delta);
  const bool milstein = scheme == Scheme::milstein;
  for (std::size_t i = 0; i < steps; ++i) {
    x = scheme_step(m, x, delta, sqrt_delta, milstein, rng.normal());
    if (!(x > iv.lower && x < iv.upper)) return std::nullopt;
  }
  return x;
}

inline void check_grid_args(double horizon, std::size_t steps) {
  if (!(horizon > 0.0)) throw UsageError("interval length must be positive");
  if (steps < 1) throw UsageError("need at least one step");
}

}  // namespace detail

/// Simulates X on [0, horizon] from x0 with `steps` equal steps.
/// Throws BoundaryViolation if the discretized path leaves the state interval.
template <Diffusion M>
GridPath simulate_path(const M& m, double x0, double horizon, std::size_t steps, Scheme scheme,
                       RandomStream& rng) {
  detail::check_grid_args(horizon, steps);
  if (!m.state_interval().contains(x0)) throw DomainError("start point outside the state interval");
  std::vector<double> v(steps + 1);
  v[0] = x0;
  const double delta = horizon / static_cast<double>(steps);
  if (auto bad = detail::simulate_into(m, delta, scheme, rng, std::span<double>(v)))
    throw BoundaryViolation(bad->step, bad->value);
  return GridPath(0.0, delta, std::move(v));
}

/// A diffusion whose initial value is distributed as p_horizon(b, .): simulate
/// V on [0, 2 horizon] from b with 2 * steps steps and keep the second half,
/// re-indexed to [0, horizon].
template <Diffusion M>
GridPath simulate_pdelta_b(const M& m, double b, double horizon, std::size_t steps, Scheme scheme,
                           RandomStream& rng) {
  detail::check_grid_args(horizon, steps);
  if (!m.state_interval().contains(b)) throw DomainError("b outside the state interval");
  const double delta = horizon / static_cast<double>(steps);
  auto mid = detail::advance(m, b, delta, steps, scheme, rng);
  if (!mid) throw BoundaryViolation(steps, std::nan(""));
  std::vector<double> v(steps + 1);
  v[0] = *mid;
  if (auto bad = detail::simulate_into(m, delta, scheme, rng, std::span<double>(v)))
    throw BoundaryViolation(steps + bad->step, bad->value);
  return GridPath(0.0, delta, std::move(v));
}

}  // namespace dbridge
