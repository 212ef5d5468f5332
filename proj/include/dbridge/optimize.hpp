#pragma once

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>
#include <gsl/gsl_vector.h>

#include <boost/math/tools/minima.hpp>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "dbridge/errors.hpp"

namespace dbridge {

using Objective = std::function<double(std::span<const double>)>;

struct SimplexOptions {
  double initial_step = 0.1;
  double size_tolerance = 1e-8;
  std::size_t max_iterations = 5000;
  std::size_t restarts = 1;
};

struct MinimizeResult {
  std::vector<double> argmin;
  double value = 0.0;
  std::size_t evaluations = 0;
  bool converged = false;
};

namespace detail {

struct GslVectorDeleter {
  void operator()(gsl_vector* v) const noexcept { gsl_vector_free(v); }
};
struct GslSimplexDeleter {
  void operator()(gsl_multimin_fminimizer* s) const noexcept { gsl_multimin_fminimizer_free(s); }
};
using GslVector = std::unique_ptr<gsl_vector, GslVectorDeleter>;

struct SimplexContext {
  const Objective* fn;
  std::size_t evaluations = 0;
};

inline double simplex_trampoline(const gsl_vector* v, void* params) {
  auto* ctx = static_cast<SimplexContext*>(params);
  ++ctx->evaluations;
  const double value = (*ctx->fn)(std::span<const double>(v->data, v->size));
  return std::isfinite(value) ? value : std::numeric_limits<double>::max();
}

inline GslVector make_vector(std::span<const double> x) {
  GslVector v(gsl_vector_alloc(x.size()));
  if (!v) throw NumericError("allocation of a GSL vector failed");
  for (std::size_t i = 0; i < x.size(); ++i) gsl_vector_set(v.get(), i, x[i]);
  return v;
}

}  // namespace detail

/// Nelder-Mead minimization (GSL nmsimplex2), restarted from its own optimum
/// `restarts` times to escape premature collapse of the simplex.
inline MinimizeResult nelder_mead(const Objective& fn, std::span<const double> start,
                                  const SimplexOptions& options = {}) {
  if (start.empty()) throw UsageError("nelder_mead needs at least one coordinate");
  gsl_set_error_handler_off();
  const std::size_t dim = start.size();
  detail::SimplexContext ctx{&fn};
  gsl_multimin_function f{&detail::simplex_trampoline, dim, &ctx};
  MinimizeResult out;
  out.argmin.assign(start.begin(), start.end());
  for (std::size_t round = 0; round <= options.restarts; ++round) {
    std::unique_ptr<gsl_multimin_fminimizer, detail::GslSimplexDeleter> s(
        gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, dim));
    if (!s) throw NumericError("allocation of the simplex minimizer failed");
    auto x = detail::make_vector(out.argmin);
    detail::GslVector step(gsl_vector_alloc(dim));
    gsl_vector_set_all(step.get(), options.initial_step);
    if (gsl_multimin_fminimizer_set(s.get(), &f, x.get(), step.get()) != GSL_SUCCESS)
      throw NumericError("simplex initialization failed");
    bool converged = false;
    for (std::size_t it = 0; it < options.max_iterations; ++it) {
      if (gsl_multimin_fminimizer_iterate(s.get()) != GSL_SUCCESS) break;
      if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s.get()), options.size_tolerance) ==
          GSL_SUCCESS) {
        converged = true;
        break;
      }
    }
    const gsl_vector* best = gsl_multimin_fminimizer_x(s.get());
    for (std::size_t i = 0; i < dim; ++i) out.argmin[i] = gsl_vector_get(best, i);
    out.value = gsl_multimin_fminimizer_minimum(s.get());
    out.converged = converged;
  }
  out.evaluations = ctx.evaluations;
  return out;
}

struct ScalarMinimum {
  double argmin = 0.0;
  double value = 0.0;
};

/// Brent minimization of a scalar function on [lo, hi]. When the minimum lands
/// at an edge the window is shifted outward, up to `max_shifts` times.
inline ScalarMinimum brent_minimize(const std::function<double(double)>& fn, double lo, double hi,
                                    int max_shifts = 8) {
  if (!(lo < hi)) throw UsageError("brent_minimize needs lo < hi");
  auto safe = [&](double u) {
    const double v = fn(u);
    return std::isfinite(v) ? v : std::numeric_limits<double>::max();
  };
  ScalarMinimum best;
  for (int shift = 0;; ++shift) {
    std::uintmax_t max_iter = 200;
    const auto [u, v] = boost::math::tools::brent_find_minima(safe, lo, hi, 40, max_iter);
    best = {u, v};
    const double width = hi - lo;
    const double margin = 1e-3 * width;
    if (shift >= max_shifts) break;
    if (u - lo < margin) {
      hi = lo + 0.5 * width;
      lo -= width;
    } else if (hi - u < margin) {
      lo = hi - 0.5 * width;
      hi += width;
    } else {
      break;
    }
  }
  return best;
}

}  // namespace dbridge
