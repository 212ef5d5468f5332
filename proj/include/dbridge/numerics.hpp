#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <cstdint>
#include <limits>
#include <utility>

#include <boost/math/tools/roots.hpp>

#include "dbridge/errors.hpp"

namespace dbridge {

namespace detail {

template <class F>
double simpson_step(F& f, double a, double fa, double b, double fb, double m, double fm,
                    double whole, double tol, int depth, bool& failed) {
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (std::fabs(delta) <= 15.0 * tol || !std::isfinite(delta)) {
    if (!std::isfinite(delta)) failed = true;
    return left + right + delta / 15.0;
  }
  if (depth <= 0) {
    failed = true;
    return left + right + delta / 15.0;
  }
  return simpson_step(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1, failed) +
         simpson_step(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1, failed);
}

}  // namespace detail

/// Adaptive Simpson quadrature of f over [a, b]. The tolerance is absolute
/// for integrals of order one and relative to a coarse estimate of
/// int |f| otherwise. Throws NumericError if the recursion limit is hit.
template <class F>
double adaptive_simpson(F&& f, double a, double b, double tol = 1e-10, int max_depth = 30) {
  if (a == b) return 0.0;
  if (a > b) return -adaptive_simpson(f, b, a, tol, max_depth);
  // Several initial panels so narrow features near the middle are not skipped.
  constexpr int kPanels = 8;
  const double h = (b - a) / kPanels;
  double xs[2 * kPanels + 1], fs[2 * kPanels + 1];
  double scale = 0.0;
  for (int i = 0; i <= 2 * kPanels; ++i) {
    xs[i] = i == 2 * kPanels ? b : a + 0.5 * i * h;
    fs[i] = f(xs[i]);
    scale += std::fabs(fs[i]);
  }
  scale *= (b - a) / (2 * kPanels + 1);
  const double abs_tol = tol * std::max(1.0, std::isfinite(scale) ? scale : 1.0);
  double total = 0.0;
  bool failed = false;
  for (int i = 0; i < kPanels; ++i) {
    const double x0 = xs[2 * i], m = xs[2 * i + 1], x1 = xs[2 * i + 2];
    const double f0 = fs[2 * i], fm = fs[2 * i + 1], f1 = fs[2 * i + 2];
    const double whole = (x1 - x0) / 6.0 * (f0 + 4.0 * fm + f1);
    total += detail::simpson_step(f, x0, f0, x1, f1, m, fm, whole, abs_tol / kPanels, max_depth, failed);
  }
  if (failed || !std::isfinite(total)) {
    throw NumericError("adaptive Simpson quadrature did not converge on [" + std::to_string(a) +
                       ", " + std::to_string(b) + "]");
  }
  return total;
}

/// Solves g(x) = target for increasing g on [lo, hi]; the bracket is widened
/// geometrically inside (lower_limit, upper_limit) when needed.
template <class G>
double solve_increasing(G&& g, double target, double lo, double hi, double lower_limit,
                        double upper_limit, double x_tol = 1e-12) {
  auto f = [&](double x) { return g(x) - target; };
  double flo = f(lo), fhi = f(hi);
  double step = hi - lo;
  for (int i = 0; i < 200 && flo > 0.0; ++i) {
    hi = lo;
    fhi = flo;
    step *= 2.0;
    lo = std::isfinite(lower_limit) ? std::max(lo - step, 0.5 * (lo + lower_limit)) : lo - step;
    flo = f(lo);
  }
  for (int i = 0; i < 200 && fhi < 0.0; ++i) {
    lo = hi;
    flo = fhi;
    step *= 2.0;
    hi = std::isfinite(upper_limit) ? std::min(hi + step, 0.5 * (hi + upper_limit)) : hi + step;
    fhi = f(hi);
  }
  if (flo > 0.0 || fhi < 0.0) throw DomainError("target value outside the range of the transform");
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  std::uintmax_t iters = 400;
  auto tolerance = [x_tol](double a, double b) { return std::fabs(b - a) <= x_tol; };
  const auto bracket = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi, tolerance, iters);
  return 0.5 * (bracket.first + bracket.second);
}

}  // namespace dbridge
