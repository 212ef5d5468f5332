#pragma once

#include <cstddef>
#include <vector>

#include "dbridge/errors.hpp"

namespace dbridge {

/// Trajectory on the uniform grid t0, t0 + delta, ..., t0 + N delta.
struct GridPath {
  double t0 = 0.0;
  double delta = 1.0;
  std::vector<double> values;

  GridPath() = default;
  GridPath(double t0_, double delta_, std::vector<double> values_)
      : t0(t0_), delta(delta_), values(std::move(values_)) {
    if (values.size() < 2) throw UsageError("a grid path needs at least two points");
    if (!(delta > 0.0)) throw UsageError("grid step must be positive");
  }

  std::size_t steps() const noexcept { return values.size() - 1; }
  double time(std::size_t i) const noexcept { return t0 + static_cast<double>(i) * delta; }
  double end_time() const noexcept { return time(steps()); }
  double front() const noexcept { return values.front(); }
  double back() const noexcept { return values.back(); }
  double operator[](std::size_t i) const noexcept { return values[i]; }

  bool same_grid(const GridPath& other) const noexcept {
    return values.size() == other.values.size() && delta == other.delta && t0 == other.t0;
  }

  friend bool operator==(const GridPath&, const GridPath&) = default;
};

/// Nearest grid index for time t.
inline std::size_t grid_index(const GridPath& p, double t) {
  const double r = (t - p.t0) / p.delta;
  if (r < -1e-9 || r > static_cast<double>(p.steps()) + 1e-9)
    throw UsageError("time outside the path's grid");
  const auto i = static_cast<std::size_t>(r + 0.5);
  return i > p.steps() ? p.steps() : i;
}

}  // namespace dbridge
