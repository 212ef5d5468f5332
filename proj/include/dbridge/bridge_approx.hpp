#pragma once

// Approximate diffusion bridges: a forward path from a and a time-reversed
// path from b are spliced at their first grid crossing. Conditional on a
// crossing, the result is a bridge conditioned on being hit by an independent
// diffusion started from p_Delta(b, .).

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "dbridge/errors.hpp"
#include "dbridge/model.hpp"
#include "dbridge/parallel.hpp"
#include "dbridge/path.hpp"
#include "dbridge/rng.hpp"
#include "dbridge/schemes.hpp"

namespace dbridge {

inline constexpr std::size_t kDefaultMaxAttempts = 1'000'000;

/// Endpoints and discretization of a (0, a, horizon, b)-bridge.
struct BridgeProblem {
  double a = 0.0;
  double b = 0.0;
  double horizon = 1.0;
  std::size_t steps = 100;
  Scheme scheme = Scheme::euler;

  double delta() const noexcept { return horizon / static_cast<double>(steps); }
};

struct BridgeSample {
  GridPath path;
  std::size_t crossing_index = 0;
  std::size_t attempts = 0;         // including the accepted pair
  std::size_t boundary_aborts = 0;  // pairs discarded for leaving the state interval
};

namespace detail {

/// First crossing of y1 with the reversal of y2 (y2 given in its own forward
/// time). D_0 = 0 counts as the D_0 >= 0 branch.
inline std::optional<std::size_t> first_crossing(std::span<const double> y1,
                                                 std::span<const double> y2) {
  const std::size_t n = y1.size() - 1;
  if (y1[0] - y2[n] >= 0.0) {
    for (std::size_t i = 1; i <= n; ++i)
      if (y1[i] - y2[n - i] <= 0.0) return i;
  } else {
    for (std::size_t i = 1; i <= n; ++i)
      if (y1[i] - y2[n - i] >= 0.0) return i;
  }
  return std::nullopt;
}

inline void splice_into(std::span<const double> y1, std::span<const double> y2, std::size_t nu,
                        std::span<double> out) {
  const std::size_t n = y1.size() - 1;
  for (std::size_t i = 0; i < nu; ++i) out[i] = y1[i];
  for (std::size_t i = nu; i <= n; ++i) out[i] = y2[n - i];
}

inline void check_problem(const BridgeProblem& p) {
  if (!(p.horizon > 0.0)) throw UsageError("bridge interval length must be positive");
  if (p.steps < 1) throw UsageError("bridge needs at least one step");
}

/// Reusable buffers for one forward/backward pair.
struct PairWorkspace {
  std::vector<double> forward;
  std::vector<double> backward;
  explicit PairWorkspace(std::size_t steps) : forward(steps + 1), backward(steps + 1) {}
};

enum class PairOutcome { crossed, missed, left_interval };

/// Simulates one forward/backward pair; on a crossing, `nu` is set.
template <Diffusion M>
PairOutcome simulate_pair(const M& m, const BridgeProblem& p, RandomStream& rng,
                          PairWorkspace& ws, std::size_t& nu) {
  const double delta = p.delta();
  ws.forward[0] = p.a;
  ws.backward[0] = p.b;
  const bool out1 = simulate_into(m, delta, p.scheme, rng, std::span<double>(ws.forward)).has_value();
  const bool out2 = simulate_into(m, delta, p.scheme, rng, std::span<double>(ws.backward)).has_value();
  if (out1 || out2) return PairOutcome::left_interval;
  const auto crossing = first_crossing(ws.forward, ws.backward);
  if (!crossing) return PairOutcome::missed;
  nu = *crossing;
  return PairOutcome::crossed;
}

}  // namespace detail

/// Crossing index nu for y1 and y2_reversed (y2_reversed[i] is the backward
/// path at time delta (N - i)); nullopt when the paths do not cross.
inline std::optional<std::size_t> find_crossing(const GridPath& y1, const GridPath& y2_reversed) {
  if (!y1.same_grid(y2_reversed)) throw UsageError("find_crossing: paths are on different grids");
  const std::size_t n = y1.steps();
  const double d0 = y1[0] - y2_reversed[0];
  if (d0 >= 0.0) {
    for (std::size_t i = 1; i <= n; ++i)
      if (y1[i] - y2_reversed[i] <= 0.0) return i;
  } else {
    for (std::size_t i = 1; i <= n; ++i)
      if (y1[i] - y2_reversed[i] >= 0.0) return i;
  }
  return std::nullopt;
}

/// Path reversed in time on the same grid.
inline GridPath reversed(const GridPath& p) {
  return GridPath(p.t0, p.delta, std::vector<double>(p.values.rbegin(), p.values.rend()));
}

/// B[i] = y1[i] for i < nu and y2[N - i] for i >= nu.
inline GridPath splice(const GridPath& y1, const GridPath& y2, std::size_t nu) {
  if (!y1.same_grid(y2)) throw UsageError("splice: paths are on different grids");
  if (nu > y1.steps()) throw UsageError("splice: crossing index beyond the grid");
  std::vector<double> out(y1.values.size());
  detail::splice_into(y1.values, y2.values, nu, out);
  return GridPath(y1.t0, y1.delta, std::move(out));
}

/// Rejection sampler: simulate pairs until one crosses.
/// Throws RejectionBudgetError after `max_attempts` pairs.
template <Diffusion M>
BridgeSample sample_bridge_approx(const M& m, const BridgeProblem& p, std::size_t max_attempts,
                                  RandomStream& rng) {
  detail::check_problem(p);
  const Interval iv = m.state_interval();
  if (!iv.contains(p.a) || !iv.contains(p.b)) throw DomainError("bridge endpoints outside the state interval");
  detail::PairWorkspace ws(p.steps);
  BridgeSample out;
  for (std::size_t attempt = 1; attempt <= max_attempts; ++attempt) {
    std::size_t nu = 0;
    const auto outcome = detail::simulate_pair(m, p, rng, ws, nu);
    if (outcome == detail::PairOutcome::left_interval) {
      ++out.boundary_aborts;
      continue;
    }
    if (outcome == detail::PairOutcome::missed) continue;
    std::vector<double> values(p.steps + 1);
    detail::splice_into(ws.forward, ws.backward, nu, values);
    out.path = GridPath(0.0, p.delta(), std::move(values));
    out.crossing_index = nu;
    out.attempts = attempt;
    return out;
  }
  throw RejectionBudgetError(max_attempts, out.boundary_aborts);
}

template <Diffusion M>
BridgeSample sample_bridge_approx(const M& m, double a, double b, double horizon,
                                  std::size_t steps, Scheme scheme, std::size_t max_attempts,
                                  RandomStream& rng) {
  return sample_bridge_approx(m, BridgeProblem{a, b, horizon, steps, scheme}, max_attempts, rng);
}

/// `count` independent bridges; bridge j uses root.substream(j), so the output
/// does not depend on `threads`.
template <Diffusion M>
std::vector<BridgeSample> sample_bridges_approx(const M& m, const BridgeProblem& p,
                                                std::size_t count, const RandomStream& root,
                                                std::size_t max_attempts = kDefaultMaxAttempts,
                                                unsigned threads = 1) {
  std::vector<BridgeSample> out(count);
  parallel_for(count, threads, [&](std::size_t j) {
    RandomStream rng = root.substream(j);
    out[j] = sample_bridge_approx(m, p, max_attempts, rng);
  });
  return out;
}

struct RejectionEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  std::size_t trials = 0;
  std::size_t rejections = 0;
  std::size_t boundary_aborts = 0;
};

/// Fraction of single forward/backward pairs without a crossing. Pairs that
/// leave the state interval count as rejections.
template <Diffusion M>
RejectionEstimate estimate_rejection_prob(const M& m, const BridgeProblem& p,
                                          std::size_t n_samples, RandomStream& rng) {
  detail::check_problem(p);
  if (n_samples < 1) throw UsageError("estimate_rejection_prob needs at least one sample");
  detail::PairWorkspace ws(p.steps);
  RejectionEstimate r;
  r.trials = n_samples;
  for (std::size_t k = 0; k < n_samples; ++k) {
    std::size_t nu = 0;
    const auto outcome = detail::simulate_pair(m, p, rng, ws, nu);
    if (outcome == detail::PairOutcome::crossed) continue;
    ++r.rejections;
    if (outcome == detail::PairOutcome::left_interval) ++r.boundary_aborts;
  }
  const double n = static_cast<double>(n_samples);
  r.estimate = static_cast<double>(r.rejections) / n;
  r.std_error = std::sqrt(r.estimate * (1.0 - r.estimate) / n);
  return r;
}

}  // namespace dbridge
