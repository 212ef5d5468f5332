#pragma once

// Rejection-rate and hit-probability tables for the approximate sampler.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dbridge/bridge_approx.hpp"
#include "dbridge/bridge_exact.hpp"
#include "dbridge/errors.hpp"
#include "dbridge/ou_oracle.hpp"
#include "dbridge/rng.hpp"

namespace dbridge {

/// Produces `count` exact bridges for a problem.
using ExactBridgeSource =
    std::function<std::vector<GridPath>(const BridgeProblem&, std::size_t count, RandomStream&)>;

inline ExactBridgeSource ou_oracle_source(const OuParams& params) {
  return [params](const BridgeProblem& p, std::size_t count, RandomStream& rng) {
    std::vector<GridPath> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
      out.push_back(sample_ou_bridge_exact(params, p.a, p.b, p.horizon, p.steps, rng));
    return out;
  };
}

/// Exact bridges from one pseudo-marginal chain; `config.thin` controls the
/// spacing between retained states.
template <Diffusion M>
ExactBridgeSource mh_source(const M& model, MhConfig config) {
  auto law = make_hitter_law(model, config.hitter);
  return [model, config, law](const BridgeProblem& p, std::size_t count, RandomStream& rng) {
    MhConfig c = config;
    c.iterations = c.burn_in + count * c.thin;
    MhResult r = mh_exact_bridge(model, p, c, rng, law);
    std::vector<GridPath> out;
    out.reserve(r.states.size());
    for (auto& s : r.states) out.push_back(std::move(s.bridge));
    out.resize(std::min(out.size(), count));
    return out;
  };
}

/// Fraction of bridges missed by one independent p_Delta(b)-diffusion each.
template <Diffusion M>
double miss_frequency(const M& m, std::span<const GridPath> bridges, const BridgeProblem& p,
                      RandomStream& rng) {
  if (bridges.empty()) throw UsageError("miss_frequency needs at least one bridge");
  std::size_t missed = 0;
  for (const auto& x : bridges) {
    if (x.steps() != p.steps) throw UsageError("bridge grid does not match the problem");
    if (!detail::pdelta_b_hits(m, x.values, p, rng)) ++missed;
  }
  return static_cast<double>(missed) / static_cast<double>(bridges.size());
}

/// 1 - pi_Delta: the probability that an exact bridge is not hit by an
/// independent p_Delta(b)-diffusion.
template <Diffusion M>
double estimate_one_minus_pi(const M& m, const BridgeProblem& p, std::size_t n_bridges,
                             const ExactBridgeSource& source, RandomStream& rng) {
  if (n_bridges < 1) throw UsageError("estimate_one_minus_pi needs at least one bridge");
  RandomStream bridge_rng = rng.substream(0);
  RandomStream hit_rng = rng.substream(1);
  const auto bridges = source(p, n_bridges, bridge_rng);
  return miss_frequency(m, std::span<const GridPath>(bridges), p, hit_rng);
}

struct BenchmarkJob {
  std::string label;
  BridgeProblem problem;
  std::size_t acceptances = 10'000;
  std::size_t pi_bridges = 0;  // 0 skips the 1 - pi column
};

struct BenchmarkRow {
  std::string label;
  BridgeProblem problem;
  std::size_t acceptances = 0;
  std::size_t attempts = 0;
  std::size_t rejections = 0;
  std::size_t boundary_aborts = 0;
  double rejection_prob = 0.0;
  double rejection_se = 0.0;
  double seconds = 0.0;
  std::optional<double> one_minus_pi;
  std::optional<double> one_minus_pi_se;
  std::string error;
};

/// Draws `acceptances` approximate bridges per job on one thread and records
/// rejections and wall time of the sampling loop. Job k uses root.substream(k).
/// A failing job yields a row with `error` set.
template <Diffusion M>
std::vector<BenchmarkRow> benchmark_table(const M& m, std::span<const BenchmarkJob> jobs,
                                          const RandomStream& root,
                                          const ExactBridgeSource& exact = {},
                                          std::size_t max_attempts = kDefaultMaxAttempts) {
  std::vector<BenchmarkRow> rows;
  rows.reserve(jobs.size());
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    const BenchmarkJob& job = jobs[k];
    BenchmarkRow row;
    row.label = job.label;
    row.problem = job.problem;
    try {
      RandomStream rng = root.substream(k);
      RandomStream sampling = rng.substream(0);
      const auto start = std::chrono::steady_clock::now();
      for (std::size_t i = 0; i < job.acceptances; ++i) {
        const BridgeSample s = sample_bridge_approx(m, job.problem, max_attempts, sampling);
        row.attempts += s.attempts;
        row.boundary_aborts += s.boundary_aborts;
      }
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      row.acceptances = job.acceptances;
      row.rejections = row.attempts - row.acceptances;
      if (row.attempts > 0) {
        const double n = static_cast<double>(row.attempts);
        row.rejection_prob = static_cast<double>(row.rejections) / n;
        row.rejection_se = std::sqrt(row.rejection_prob * (1.0 - row.rejection_prob) / n);
      }
      if (job.pi_bridges > 0 && exact) {
        RandomStream pi_rng = rng.substream(1);
        const double q = estimate_one_minus_pi(m, job.problem, job.pi_bridges, exact, pi_rng);
        row.one_minus_pi = q;
        row.one_minus_pi_se = std::sqrt(q * (1.0 - q) / static_cast<double>(job.pi_bridges));
      }
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace dbridge
