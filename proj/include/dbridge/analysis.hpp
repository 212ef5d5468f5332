#pragma once

// Speed measure, invariant density, scale function, spectral-gap lower bound
// and the Lamperti transform of a scalar diffusion.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "dbridge/errors.hpp"
#include "dbridge/model.hpp"
#include "dbridge/numerics.hpp"
#include "dbridge/rng.hpp"

namespace dbridge {

inline constexpr double kQuadratureTolerance = 1e-10;

namespace detail {

template <Diffusion M>
void require_inside(const M& m, double x, const char* what) {
  if (!m.state_interval().contains(x))
    throw DomainError(std::string(what) + ": x = " + std::to_string(x) +
                      " outside the state interval");
}

/// 2 alpha / sigma^2, the integrand of the log speed density.
template <Diffusion M>
double log_speed_integrand(const M& m, double y) {
  const double s = m.diffusion(y);
  return 2.0 * m.drift(y) / (s * s);
}

}  // namespace detail

/// Speed density m(x) = sigma(x)^-2 exp(2 int_z^x alpha/sigma^2) with z the
/// model's reference point.
template <Diffusion M>
double speed_density(const M& m, double x) {
  detail::require_inside(m, x, "speed_density");
  const double z = m.reference_point();
  const double integral = adaptive_simpson(
      [&](double y) { return detail::log_speed_integrand(m, y); }, z, x, kQuadratureTolerance);
  const double s = m.diffusion(x);
  return std::exp(integral) / (s * s);
}

/// Scale function S(x) = int_z^x 1 / (sigma^2 m).
template <Diffusion M>
double scale_function(const M& m, double x) {
  detail::require_inside(m, x, "scale_function");
  const double z = m.reference_point();
  // 1 / (sigma^2 m) = exp(-int_z^y 2 alpha / sigma^2); accumulate the exponent
  // along a fine partition so the inner integrals stay short.
  constexpr int kCells = 64;
  const double h = (x - z) / kCells;
  double total = 0.0;
  double exponent = 0.0;
  double left = z;
  for (int i = 0; i < kCells; ++i) {
    const double right = i + 1 == kCells ? x : z + (i + 1) * h;
    const double base = exponent;
    const double cell_left = left;
    total += adaptive_simpson(
        [&](double y) {
          const double inner = adaptive_simpson(
              [&](double u) { return detail::log_speed_integrand(m, u); }, cell_left, y,
              kQuadratureTolerance * 1e-2);
          return std::exp(-(base + inner));
        },
        left, right, kQuadratureTolerance / kCells);
    exponent += adaptive_simpson([&](double u) { return detail::log_speed_integrand(m, u); }, left,
                                 right, kQuadratureTolerance / kCells);
    left = right;
  }
  return total;
}

/// Finite-speed-measure summary: truncation window and total mass M.
///
/// Built once per model. Unbounded ends are truncated where the remaining
/// speed mass is negligible (below about 1e-10 of M); bounded ends are approached
/// geometrically. Throws ModelError if M is not finite.
template <Diffusion M>
class SpeedMeasure {
 public:
  explicit SpeedMeasure(M model, double tail_tolerance = 1e-10)
      : model_(std::move(model)), tolerance_(tail_tolerance) {
    const double z = model_.reference_point();
    anchors_.push_back({z, 0.0, 0.0, 0.0});
    const double step0 = 0.25 * std::max(1e-3, model_.diffusion(z));
    extend(+1, step0);
    extend(-1, step0);
    std::sort(anchors_.begin(), anchors_.end(),
              [](const Anchor& a, const Anchor& b) { return a.x < b.x; });
    // Cumulative mass from the lower truncation bound.
    double cum = 0.0;
    anchors_.front().mass_below = 0.0;
    for (std::size_t i = 1; i < anchors_.size(); ++i) {
      cum += cell_mass(anchors_[i - 1], anchors_[i].x);
      anchors_[i].mass_below = cum;
    }
    total_mass_ = cum;
    anchors_.back().mass_above = 0.0;
    cum = 0.0;
    for (std::size_t i = anchors_.size() - 1; i-- > 0;) {
      cum -= cell_mass(anchors_[i + 1], anchors_[i].x);
      anchors_[i].mass_above = cum;
    }
    if (!(total_mass_ > 0.0) || !std::isfinite(total_mass_))
      throw ModelError("speed measure is not finite");
  }

  const M& model() const noexcept { return model_; }
  double total_mass() const noexcept { return total_mass_; }
  double lower_bound() const noexcept { return anchors_.front().x; }
  double upper_bound() const noexcept { return anchors_.back().x; }
  double tail_tolerance() const noexcept { return tolerance_; }
  double quadrature_tolerance() const noexcept { return kQuadratureTolerance; }

  /// log m(x) from the nearest anchor.
  double log_speed(double x) const {
    const Anchor& a = nearest(x);
    const double integral = adaptive_simpson(
        [&](double y) { return detail::log_speed_integrand(model_, y); }, a.x, x,
        kQuadratureTolerance * 1e-2);
    const double s = model_.diffusion(x);
    return a.log_integral + integral - 2.0 * std::log(s);
  }

  double speed(double x) const {
    detail::require_inside(model_, x, "speed");
    return std::exp(log_speed(x));
  }

  /// nu(x) = m(x) / M.
  double invariant_density(double x) const { return speed(x) / total_mass_; }

  /// int over (lower truncation bound, x) of m.
  double mass_below(double x) const {
    if (x <= lower_bound()) return 0.0;
    if (x >= upper_bound()) return total_mass_;
    auto it = std::upper_bound(anchors_.begin(), anchors_.end(), x,
                               [](double v, const Anchor& a) { return v < a.x; });
    const Anchor& a = *(it - 1);
    return a.mass_below + cell_mass(a, x);
  }

  /// int over (x, upper truncation bound) of m, accumulated from the top so
  /// that small upper tails keep their relative accuracy.
  double mass_above(double x) const {
    if (x >= upper_bound()) return 0.0;
    if (x <= lower_bound()) return total_mass_;
    auto it = std::upper_bound(anchors_.begin(), anchors_.end(), x,
                               [](double v, const Anchor& a) { return v < a.x; });
    return it->mass_above - cell_mass(*it, x);
  }

 private:
  struct Anchor {
    double x;
    double log_integral;  // int_z^x 2 alpha / sigma^2
    double mass_below;
    double mass_above = 0.0;
  };

  const Anchor& nearest(double x) const {
    auto it = std::lower_bound(anchors_.begin(), anchors_.end(), x,
                               [](const Anchor& a, double v) { return a.x < v; });
    if (it == anchors_.end()) return anchors_.back();
    if (it == anchors_.begin()) return *it;
    return (x - (it - 1)->x) < (it->x - x) ? *(it - 1) : *it;
  }

  double cell_mass(const Anchor& a, double b) const {
    return adaptive_simpson(
        [&](double y) {
          const double inner = adaptive_simpson(
              [&](double u) { return detail::log_speed_integrand(model_, u); }, a.x, y,
              kQuadratureTolerance * 1e-2);
          const double s = model_.diffusion(y);
          return std::exp(a.log_integral + inner) / (s * s);
        },
        a.x, b, kQuadratureTolerance * 1e-2);
  }

  void extend(int direction, double step0) {
    const Interval iv = model_.state_interval();
    const double z = model_.reference_point();
    const double end = direction > 0 ? iv.upper : iv.lower;
    double running = 0.0;
    double step = step0;
    Anchor last{z, 0.0, 0.0, 0.0};
    for (int k = 0; k < 400; ++k) {
      double next;
      if (std::isfinite(end)) {
        next = last.x + 0.5 * (end - last.x);
      } else {
        next = last.x + direction * step;
        step *= 1.25;
      }
      const double mass = std::fabs(cell_mass(last, next));
      const double inner = adaptive_simpson(
          [&](double u) { return detail::log_speed_integrand(model_, u); }, last.x, next,
          kQuadratureTolerance * 1e-2);
      last = {next, last.log_integral + inner, 0.0, 0.0};
      anchors_.push_back(last);
      running += mass;
      if (!std::isfinite(running)) break;
      // Stop once the last cell is negligible and m is decaying toward the end.
      if (k >= 3 && mass <= 1e-2 * tolerance_ * running) return;
      if (std::isfinite(end) && std::fabs(end - next) < 1e-300) break;
    }
    throw ModelError("speed measure is not finite (no convergence of the truncation search)");
  }

  M model_;
  double tolerance_;
  double total_mass_ = 0.0;
  std::vector<Anchor> anchors_;
};

template <Diffusion M>
double invariant_density(const M& m, double x) {
  return SpeedMeasure<M>(m).invariant_density(x);
}

/// Draws from the invariant law nu = m / M by inverting its distribution
/// function, tabulated on a uniform grid over the truncation window.
class InvariantLaw {
 public:
  template <Diffusion M>
  explicit InvariantLaw(const M& model, std::size_t points = 2049) {
    if (points < 2) throw UsageError("InvariantLaw needs at least two grid points");
    const SpeedMeasure<M> speed(model);
    const double lo = speed.lower_bound(), hi = speed.upper_bound();
    x_.resize(points);
    cdf_.resize(points);
    for (std::size_t i = 0; i < points; ++i) {
      x_[i] = i + 1 == points ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
      cdf_[i] = speed.mass_below(x_[i]) / speed.total_mass();
    }
    cdf_.front() = 0.0;
    cdf_.back() = 1.0;
    for (std::size_t i = 1; i < points; ++i) cdf_[i] = std::max(cdf_[i], cdf_[i - 1]);
    // Open state intervals: keep draws strictly inside.
    const Interval iv = model.state_interval();
    if (!(x_.front() > iv.lower)) x_.front() = std::nextafter(iv.lower, iv.upper);
    if (!(x_.back() < iv.upper)) x_.back() = std::nextafter(iv.upper, iv.lower);
  }

  double quantile(double u) const {
    if (!(u > 0.0 && u < 1.0)) throw UsageError("InvariantLaw::quantile: level outside (0, 1)");
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const std::size_t i = static_cast<std::size_t>(it - cdf_.begin());
    if (i == 0) return x_.front();
    if (i >= cdf_.size()) return x_.back();
    const double w = (u - cdf_[i - 1]) / (cdf_[i] - cdf_[i - 1]);
    return x_[i - 1] + w * (x_[i] - x_[i - 1]);
  }

  double sample(RandomStream& rng) const { return quantile(rng.uniform()); }

  std::span<const double> grid() const noexcept { return x_; }
  std::span<const double> cdf() const noexcept { return cdf_; }

 private:
  std::vector<double> x_;
  std::vector<double> cdf_;
};

/// Scale function tabulated on a grid, with an inverse.
///
/// The inverse locates the grid cell by bisection, starts from the linear
/// interpolant and refines with a bracketed solve on the exact S.
template <Diffusion M>
class ScaleTable {
 public:
  ScaleTable(M model, std::vector<double> grid) : model_(std::move(model)), grid_(std::move(grid)) {
    if (grid_.size() < 2) throw UsageError("scale table needs at least two grid points");
    for (std::size_t i = 0; i < grid_.size(); ++i) {
      detail::require_inside(model_, grid_[i], "ScaleTable");
      if (i > 0 && !(grid_[i] > grid_[i - 1])) throw UsageError("grid must be increasing");
    }
    const double z = model_.reference_point();
    log_integral_.resize(grid_.size());
    scale_.resize(grid_.size());
    // Anchor at the grid point nearest to z.
    auto it = std::lower_bound(grid_.begin(), grid_.end(), z);
    std::size_t k = it == grid_.end() ? grid_.size() - 1 : static_cast<std::size_t>(it - grid_.begin());
    log_integral_[k] = integrate_log_speed(z, grid_[k]);
    scale_[k] = cell_scale(z, 0.0, grid_[k]);
    for (std::size_t i = k + 1; i < grid_.size(); ++i) {
      log_integral_[i] = log_integral_[i - 1] + integrate_log_speed(grid_[i - 1], grid_[i]);
      scale_[i] = scale_[i - 1] + cell_scale(grid_[i - 1], log_integral_[i - 1], grid_[i]);
    }
    for (std::size_t i = k; i-- > 0;) {
      log_integral_[i] = log_integral_[i + 1] + integrate_log_speed(grid_[i + 1], grid_[i]);
      scale_[i] = scale_[i + 1] + cell_scale(grid_[i + 1], log_integral_[i + 1], grid_[i]);
    }
    for (std::size_t i = 1; i < scale_.size(); ++i) {
      if (!(scale_[i] > scale_[i - 1])) throw NumericError("scale function not increasing on grid");
    }
  }

  const std::vector<double>& grid() const noexcept { return grid_; }
  const std::vector<double>& values() const noexcept { return scale_; }
  /// int_z^{grid[i]} 2 alpha / sigma^2 at each grid point.
  const std::vector<double>& log_integrals() const noexcept { return log_integral_; }

  double operator()(double x) const {
    const std::size_t j = cell_of_x(x);
    return scale_[j] + cell_scale(grid_[j], log_integral_[j], x);
  }

  double inverse(double y) const {
    if (y < scale_.front() || y > scale_.back())
      throw DomainError("scale value outside the tabulated range");
    const auto it = std::upper_bound(scale_.begin(), scale_.end(), y);
    std::size_t j = it == scale_.begin() ? 0 : static_cast<std::size_t>(it - scale_.begin()) - 1;
    if (j + 1 >= grid_.size()) return grid_.back();
    double lo = grid_[j], hi = grid_[j + 1];
    if (y == scale_[j]) return lo;
    auto s = [&](double x) { return scale_[j] + cell_scale(grid_[j], log_integral_[j], x); };
    // Shrink the bracket around the linear interpolant before the exact solve.
    const double w = (y - scale_[j]) / (scale_[j + 1] - scale_[j]);
    const double guess = lo + w * (hi - lo);
    const double half = 0.05 * (hi - lo);
    if (guess - half > lo && s(guess - half) <= y) lo = guess - half;
    if (guess + half < hi && s(guess + half) >= y) hi = guess + half;
    return solve_increasing(s, y, lo, hi, grid_[j], grid_[j + 1], 1e-13);
  }

 private:
  std::size_t cell_of_x(double x) const {
    if (x < grid_.front() || x > grid_.back()) throw DomainError("x outside the tabulated grid");
    auto it = std::upper_bound(grid_.begin(), grid_.end(), x);
    std::size_t j = static_cast<std::size_t>(it - grid_.begin());
    return j == 0 ? 0 : j - 1;
  }

  double integrate_log_speed(double a, double b) const {
    return adaptive_simpson([&](double u) { return detail::log_speed_integrand(model_, u); }, a, b,
                            kQuadratureTolerance * 1e-2);
  }

  /// int_a^b exp(-(base + int_a^y 2 alpha/sigma^2)) dy
  double cell_scale(double a, double base, double b) const {
    return adaptive_simpson(
        [&](double y) { return std::exp(-(base + integrate_log_speed(a, y))); }, a, b,
        kQuadratureTolerance * 1e-2);
  }

  M model_;
  std::vector<double> grid_;
  std::vector<double> log_integral_;
  std::vector<double> scale_;
};

struct SpectralGapBound {
  double bound = 0.0;  // C = 1 / (8 inf max(C1, C0))
  std::vector<double> grid;
  std::vector<double> scale;
  std::vector<double> phi;
  std::vector<double> psi;
  std::vector<double> c1;
  std::vector<double> c0;
};

/// Lower bound on the spectral gap of an ergodic diffusion, evaluated on the
/// increasing `grid`, which must cover all but `grid_tail_tolerance` of the
/// invariant mass.
template <Diffusion M>
SpectralGapBound spectral_gap_lower_bound(const M& m, std::span<const double> grid,
                                          double grid_tail_tolerance = 1e-6) {
  SpeedMeasure<M> speed(m);
  ScaleTable<M> table(m, std::vector<double>(grid.begin(), grid.end()));
  const std::size_t n = grid.size();
  const double total = speed.total_mass();
  const double below = speed.mass_below(grid.front());
  const double above = speed.mass_above(grid.back());
  if (below > grid_tail_tolerance * total || above > grid_tail_tolerance * total)
    throw DomainError("grid does not span the effective support of the invariant density");

  SpectralGapBound out;
  out.grid.assign(grid.begin(), grid.end());
  out.scale = table.values();
  out.phi.resize(n);
  out.psi.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = grid[i];
    const double sm = m.diffusion(x) * speed.speed(x);
    out.phi[i] = speed.mass_above(x) / sm;
    out.psi[i] = speed.mass_below(x) / sm;
  }
  out.c1.resize(n);
  out.c0.resize(n);
  double run = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    run = std::max(run, out.phi[i] * out.phi[i]);
    out.c1[i] = run;
  }
  run = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    run = std::max(run, out.psi[i] * out.psi[i]);
    out.c0[i] = run;
  }
  double inf_max = kInf;
  for (std::size_t i = 0; i < n; ++i) inf_max = std::min(inf_max, std::max(out.c1[i], out.c0[i]));
  out.bound = 1.0 / (8.0 * inf_max);
  return out;
}

/// h(x) = int_{base}^x 1 / sigma.
template <Diffusion M>
double lamperti_transform(const M& m, double x, double base) {
  detail::require_inside(m, x, "lamperti_transform");
  return adaptive_simpson([&](double y) { return 1.0 / m.diffusion(y); }, base, x,
                          kQuadratureTolerance);
}

template <Diffusion M>
double lamperti_transform(const M& m, double x) {
  return lamperti_transform(m, x, m.reference_point());
}

template <Diffusion M>
double lamperti_inverse(const M& m, double y, double base) {
  const Interval iv = m.state_interval();
  const double scale = m.diffusion(base);
  double lo = base - scale * 0.5, hi = base + scale * 0.5;
  if (iv.bounded_below()) lo = std::max(lo, 0.5 * (base + iv.lower));
  if (iv.bounded_above()) hi = std::min(hi, 0.5 * (base + iv.upper));
  try {
    return solve_increasing([&](double x) { return lamperti_transform(m, x, base); }, y, lo, hi,
                            iv.lower, iv.upper, 1e-12);
  } catch (const NumericError&) {
    // The bracket search ran into a boundary singularity of 1 / sigma.
    throw DomainError("lamperti_inverse: y = " + std::to_string(y) + " outside the range of the transform");
  }
}

template <Diffusion M>
double lamperti_inverse(const M& m, double y) {
  return lamperti_inverse(m, y, m.reference_point());
}

/// Drift of Y = h(X), which has unit diffusion coefficient:
/// mu(y) = alpha(x)/sigma(x) - sigma'(x)/2 at x = h^-1(y).
template <Diffusion M>
double transformed_drift(const M& m, double y, double base) {
  const double x = lamperti_inverse(m, y, base);
  return m.drift(x) / m.diffusion(x) - 0.5 * m.diffusion_deriv(x);
}

template <Diffusion M>
double transformed_drift(const M& m, double y) {
  return transformed_drift(m, y, m.reference_point());
}

}  // namespace dbridge
