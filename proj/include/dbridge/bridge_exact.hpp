#pragma once

// Exact bridges by pseudo-marginal Metropolis-Hastings. Approximate bridges are
// independence proposals; the intractable inverse hitting probability in the
// acceptance ratio is replaced by the mean of geometric hitting counts T, which
// is an unbiased estimator of it.
//
// The approximate sampler's law is the exact bridge law tilted by the
// probability that an independent diffusion started from the invariant law nu
// hits the path. Hitters started from p_Delta(b, .) give a different tilt, so
// the chain only targets the exact bridge with HitterStart::invariant.

#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dbridge/analysis.hpp"
#include "dbridge/bridge_approx.hpp"
#include "dbridge/errors.hpp"
#include "dbridge/model.hpp"
#include "dbridge/path.hpp"
#include "dbridge/rng.hpp"
#include "dbridge/schemes.hpp"

namespace dbridge {

inline constexpr std::size_t kDefaultHittingCap = 1'000'000;

/// Initial law of the independent diffusions used in the hitting counts.
enum class HitterStart {
  invariant,   // nu = m / M
  transition,  // p_Delta(b, .), the second half of a path from b over 2 Delta
};

inline HitterStart parse_hitter_start(const std::string& name) {
  if (name == "invariant") return HitterStart::invariant;
  if (name == "transition") return HitterStart::transition;
  throw UsageError("unknown hitter start '" + name + "' (expected invariant or transition)");
}

inline const char* to_string(HitterStart h) noexcept {
  return h == HitterStart::invariant ? "invariant" : "transition";
}

namespace detail {

inline bool opposite_signs(double d0, double d1) noexcept {
  return (d0 < 0.0 && d1 > 0.0) || (d0 > 0.0 && d1 < 0.0);
}

inline bool hits(std::span<const double> x, std::span<const double> y) noexcept {
  const std::size_t n = x.size();
  double prev = x[0] - y[0];
  if (prev == 0.0) return true;
  for (std::size_t i = 1; i < n; ++i) {
    const double d = x[i] - y[i];
    if (d == 0.0 || opposite_signs(prev, d)) return true;
    prev = d;
  }
  return false;
}

/// Runs a diffusion from y0 on the grid of x and stops at the first hit.
/// A path that leaves the state interval counts as a miss.
template <Diffusion M>
bool hits_from(const M& m, std::span<const double> x, const BridgeProblem& p, double y0, RandomStream& rng) {
  const double delta = p.delta();
  const Interval iv = m.state_interval();
  const double sqrt_delta = std::sqrt(delta);
  const bool milstein = p.scheme == Scheme::milstein;
  double y = y0;
  double prev = x[0] - y;
  if (prev == 0.0) return true;
  for (std::size_t i = 1; i <= p.steps; ++i) {
    y = scheme_step(m, y, delta, sqrt_delta, milstein, rng.normal());
    if (!(y > iv.lower && y < iv.upper)) return false;
    const double d = x[i] - y;
    if (d == 0.0 || opposite_signs(prev, d)) return true;
    prev = d;
  }
  return false;
}

/// Simulates one p_Delta(b)-diffusion alongside x. Makes the same decision as
/// hits(x, simulate_pdelta_b(...)) on the same stream.
template <Diffusion M>
bool pdelta_b_hits(const M& m, std::span<const double> x, const BridgeProblem& p,
                   RandomStream& rng) {
  const auto start = advance(m, p.b, p.delta(), p.steps, p.scheme, rng);
  if (!start) return false;
  return hits_from(m, x, p, *start, rng);
}

/// One hitting trial: a p_Delta(b)-diffusion when `law` is null, otherwise a
/// diffusion started from a draw of `law`.
template <Diffusion M>
bool hitter_hits(const M& m, std::span<const double> x, const BridgeProblem& p, const InvariantLaw* law,
                 RandomStream& rng) {
  if (law == nullptr) return pdelta_b_hits(m, x, p, rng);
  return hits_from(m, x, p, law->sample(rng), rng);
}

/// Hitting count, or nullopt when `cap` draws all missed.
template <Diffusion M>
std::optional<std::size_t> draw_T(const M& m, std::span<const double> x, const BridgeProblem& p,
                                  const InvariantLaw* law, RandomStream& rng, std::size_t cap) {
  for (std::size_t i = 1; i <= cap; ++i)
    if (hitter_hits(m, x, p, law, rng)) return i;
  return std::nullopt;
}

/// Pseudo-marginal acceptance: accept with probability
/// min(1, proposal / current), given u uniform on (0, 1).
inline bool mh_accept(double u, double current_rho, double proposal_rho) noexcept {
  return u * current_rho <= proposal_rho;
}

}  // namespace detail

/// True iff the graphs of x and y intersect on the grid: equal at a grid point
/// or strictly opposite order at consecutive grid points.
inline bool hits(const GridPath& x, const GridPath& y) {
  if (!x.same_grid(y)) throw UsageError("hits: paths are on different grids");
  return detail::hits(x.values, y.values);
}

/// Number of independent hitters drawn until one hits x: p_Delta(b)-diffusions,
/// or diffusions started from `law` when given.
/// Throws HittingBudgetError if none of `cap` draws hits.
template <Diffusion M>
std::size_t sample_T(const M& m, const GridPath& x, const BridgeProblem& p, RandomStream& rng,
                     std::size_t cap = kDefaultHittingCap, const InvariantLaw* law = nullptr) {
  if (x.steps() != p.steps) throw UsageError("sample_T: path grid does not match the problem");
  if (auto t = detail::draw_T(m, x.values, p, law, rng, cap)) return *t;
  throw HittingBudgetError(cap);
}

/// Mean of the hitting counts, an unbiased estimate of 1 / pi_Delta(x).
inline double rho_hat(std::span<const std::size_t> t_vector) {
  if (t_vector.empty()) throw UsageError("rho_hat of an empty vector");
  const double sum = std::accumulate(t_vector.begin(), t_vector.end(), 0.0,
                                     [](double acc, std::size_t t) { return acc + static_cast<double>(t); });
  return sum / static_cast<double>(t_vector.size());
}

/// Monte Carlo estimate of pi_Delta(x): the fraction of `n_draws` independent
/// p_Delta(b)-diffusions (or diffusions started from `law`) that hit x.
template <Diffusion M>
double estimate_pi_mc(const M& m, const GridPath& x, const BridgeProblem& p, std::size_t n_draws,
                      RandomStream& rng, const InvariantLaw* law = nullptr) {
  if (n_draws < 1) throw UsageError("estimate_pi_mc needs at least one draw");
  std::size_t hit = 0;
  for (std::size_t j = 0; j < n_draws; ++j) hit += detail::hitter_hits(m, x.values, p, law, rng) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(n_draws);
}

/// State of the pseudo-marginal chain.
struct PmState {
  GridPath bridge;
  std::vector<std::size_t> t_vector;
  double rho_hat = 1.0;

  friend bool operator==(const PmState&, const PmState&) = default;
};

struct MhConfig {
  std::size_t n_t = 10;          // hitting counts per proposal
  std::size_t iterations = 30'000;  // total, including burn-in
  std::size_t burn_in = 5'000;
  std::size_t thin = 1;
  std::size_t t_cap = kDefaultHittingCap;
  std::size_t max_attempts = kDefaultMaxAttempts;
  std::size_t max_reproposals = 1'000;  // consecutive capped proposals before giving up
  HitterStart hitter = HitterStart::invariant;
};

/// The table needed by HitterStart::invariant, or null for the transition start.
template <Diffusion M>
std::shared_ptr<const InvariantLaw> make_hitter_law(const M& m, HitterStart h) {
  if (h == HitterStart::transition) return nullptr;
  return std::make_shared<const InvariantLaw>(m);
}

/// One pseudo-marginal MH chain targeting the exact bridge law.
template <Diffusion M>
class PseudoMarginalChain {
 public:
  /// `law` may be shared between chains on the same model; it is built here
  /// when the invariant start is requested and none is given.
  PseudoMarginalChain(const M& model, BridgeProblem problem, MhConfig config, RandomStream rng,
                      std::shared_ptr<const InvariantLaw> law = nullptr)
      : model_(model), problem_(problem), config_(config), rng_(rng), law_(std::move(law)) {
    if (config_.n_t < 1) throw UsageError("need at least one hitting count per proposal");
    detail::check_problem(problem_);
    if (config_.hitter == HitterStart::transition) {
      law_.reset();
    } else if (!law_) {
      law_ = make_hitter_law(model_, config_.hitter);
    }
    try {
      state_ = propose_until_complete();
    } catch (const Error& e) {
      throw ChainInitError(std::string("could not initialize the bridge chain: ") + e.what());
    }
  }

  /// One MH iteration; returns whether the proposal was accepted. On rejection
  /// the previous state is kept unchanged.
  bool step() {
    PmState proposal = propose_until_complete();
    ++iterations_;
    if (detail::mh_accept(rng_.uniform(), state_.rho_hat, proposal.rho_hat)) {
      state_ = std::move(proposal);
      ++accepted_;
      return true;
    }
    return false;
  }

  const PmState& state() const noexcept { return state_; }
  std::size_t iterations() const noexcept { return iterations_; }
  std::size_t accepted() const noexcept { return accepted_; }
  std::size_t capped_proposals() const noexcept { return capped_; }
  double acceptance_rate() const noexcept {
    return iterations_ == 0 ? 0.0 : static_cast<double>(accepted_) / static_cast<double>(iterations_);
  }
  const BridgeProblem& problem() const noexcept { return problem_; }

 private:
  std::optional<PmState> propose() {
    BridgeSample s = sample_bridge_approx(model_, problem_, config_.max_attempts, rng_);
    PmState out;
    out.t_vector.resize(config_.n_t);
    for (std::size_t j = 0; j < config_.n_t; ++j) {
      const auto t = detail::draw_T(model_, s.path.values, problem_, law_.get(), rng_, config_.t_cap);
      if (!t) return std::nullopt;
      out.t_vector[j] = *t;
    }
    out.rho_hat = rho_hat(out.t_vector);
    out.bridge = std::move(s.path);
    return out;
  }

  /// Capped T draws would truncate the geometric tail, so the whole proposal
  /// is discarded and redrawn.
  PmState propose_until_complete() {
    for (std::size_t k = 0; k < config_.max_reproposals; ++k) {
      if (auto p = propose()) return std::move(*p);
      ++capped_;
    }
    throw HittingBudgetError(config_.t_cap);
  }

  M model_;
  BridgeProblem problem_;
  MhConfig config_;
  RandomStream rng_;
  std::shared_ptr<const InvariantLaw> law_;
  PmState state_;
  std::size_t iterations_ = 0;
  std::size_t accepted_ = 0;
  std::size_t capped_ = 0;
};

struct MhResult {
  std::vector<PmState> states;     // post burn-in, thinned
  std::vector<double> rho_trace;   // rho_hat of the current state, every iteration
  double acceptance_rate = 0.0;    // over all iterations
  double mean_rho_hat = 0.0;       // over retained states
  std::size_t capped_iterations = 0;
};

/// Runs a chain for config.iterations steps and keeps every config.thin-th
/// state after config.burn_in.
template <Diffusion M>
MhResult mh_exact_bridge(const M& m, const BridgeProblem& p, const MhConfig& config,
                         RandomStream rng, std::shared_ptr<const InvariantLaw> law = nullptr) {
  if (!(config.iterations > config.burn_in)) throw UsageError("iterations must exceed burn-in");
  if (config.thin < 1) throw UsageError("thin must be at least 1");
  PseudoMarginalChain<M> chain(m, p, config, rng, std::move(law));
  MhResult out;
  out.rho_trace.reserve(config.iterations);
  out.states.reserve((config.iterations - config.burn_in) / config.thin + 1);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    chain.step();
    out.rho_trace.push_back(chain.state().rho_hat);
    if (it >= config.burn_in && (it - config.burn_in) % config.thin == 0)
      out.states.push_back(chain.state());
  }
  out.acceptance_rate = chain.acceptance_rate();
  out.capped_iterations = chain.capped_proposals();
  double sum = 0.0;
  for (const auto& s : out.states) sum += s.rho_hat;
  out.mean_rho_hat = out.states.empty() ? 0.0 : sum / static_cast<double>(out.states.size());
  return out;
}

}  // namespace dbridge
