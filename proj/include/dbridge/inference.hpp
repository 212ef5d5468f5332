#pragma once

// Simulation-based likelihood inference for discretely observed diffusions
// dX = b_alpha(X) dt + sigma_beta(X) dW with drift linear in alpha:
// b_alpha(x) = sum_i alpha_i a_i(x).
//
// Bridges are simulated for the unit-diffusion process Y = h_beta(X), with
// h_beta(x) = int_{x*}^x 1/sigma_beta. The Monte Carlo EM criterion q and its
// exponential-family decomposition q = alpha'H - alpha'B alpha / 2 + G are
// both evaluated by the trapezoid rule on the bridge grids.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dbridge/bridge_approx.hpp"
#include "dbridge/bridge_exact.hpp"
#include "dbridge/errors.hpp"
#include "dbridge/model.hpp"
#include "dbridge/optimize.hpp"
#include "dbridge/parallel.hpp"
#include "dbridge/path.hpp"
#include "dbridge/rng.hpp"

namespace dbridge {

struct ParamVector {
  std::vector<double> alpha;
  std::vector<double> beta;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

struct DiscreteSample {
  std::vector<double> times;
  std::vector<double> values;

  DiscreteSample() = default;
  DiscreteSample(std::vector<double> t, std::vector<double> x) : times(std::move(t)), values(std::move(x)) {
    if (times.size() != values.size()) throw UsageError("times and values differ in length");
    if (times.size() < 2) throw UsageError("need at least two observations");
    for (std::size_t i = 1; i < times.size(); ++i)
      if (!(times[i] > times[i - 1])) throw UsageError("observation times must be strictly increasing");
  }

  std::size_t size() const noexcept { return values.size(); }
  std::size_t intervals() const noexcept { return values.size() - 1; }
};

/// A parametric family with drift linear in alpha and closed-form transform.
template <class F>
concept LinearDriftFamily = requires(const F& f, std::span<const double> beta, double x, std::size_t i) {
  { f.name() } -> std::convertible_to<std::string>;
  { f.drift_dim() } -> std::same_as<std::size_t>;
  { f.diffusion_dim() } -> std::same_as<std::size_t>;
  { f.state_interval() } -> std::same_as<Interval>;
  { f.reference_point() } -> std::convertible_to<double>;
  { f.valid_beta(beta) } -> std::same_as<bool>;
  { f.basis(i, x) } -> std::convertible_to<double>;
  { f.basis_deriv(i, x) } -> std::convertible_to<double>;
  { f.basis_s(i, beta, x) } -> std::convertible_to<double>;
  { f.diffusion(beta, x) } -> std::convertible_to<double>;
  { f.diffusion_deriv(beta, x) } -> std::convertible_to<double>;
  { f.lamperti(beta, x) } -> std::convertible_to<double>;
  { f.lamperti_inverse(beta, x) } -> std::convertible_to<double>;
};

template <class F>
concept HasFamilySecondDeriv = requires(const F& f, std::span<const double> beta, double x) {
  { f.diffusion_second_deriv(beta, x) } -> std::convertible_to<double>;
};

/// dX = -alpha X dt + beta dW.
struct OuFamily {
  double x_star = 0.0;

  std::string name() const { return "ou"; }
  std::size_t drift_dim() const { return 1; }
  std::size_t diffusion_dim() const { return 1; }
  Interval state_interval() const { return {}; }
  double reference_point() const { return x_star; }
  bool valid_beta(std::span<const double> beta) const { return beta.size() == 1 && beta[0] > 0.0; }
  double basis(std::size_t, double x) const { return -x; }
  double basis_deriv(std::size_t, double) const { return -1.0; }
  double basis_s(std::size_t, std::span<const double> beta, double x) const {
    return -(x * x - x_star * x_star) / (2.0 * beta[0] * beta[0]);
  }
  double diffusion(std::span<const double> beta, double) const { return beta[0]; }
  double diffusion_deriv(std::span<const double>, double) const { return 0.0; }
  double diffusion_second_deriv(std::span<const double>, double) const { return 0.0; }
  double lamperti(std::span<const double> beta, double x) const { return (x - x_star) / beta[0]; }
  double lamperti_inverse(std::span<const double> beta, double y) const { return x_star + beta[0] * y; }
};

/// dX = -alpha X / sqrt(1 + X^2) dt + beta dW.
struct HyperbolicFamily {
  double x_star = 0.0;

  std::string name() const { return "hyperbolic"; }
  std::size_t drift_dim() const { return 1; }
  std::size_t diffusion_dim() const { return 1; }
  Interval state_interval() const { return {}; }
  double reference_point() const { return x_star; }
  bool valid_beta(std::span<const double> beta) const { return beta.size() == 1 && beta[0] > 0.0; }
  double basis(std::size_t, double x) const { return -x / std::sqrt(1.0 + x * x); }
  double basis_deriv(std::size_t, double x) const {
    const double r = std::sqrt(1.0 + x * x);
    return -1.0 / (r * r * r);
  }
  double basis_s(std::size_t, std::span<const double> beta, double x) const {
    return -(std::sqrt(1.0 + x * x) - std::sqrt(1.0 + x_star * x_star)) / (beta[0] * beta[0]);
  }
  double diffusion(std::span<const double> beta, double) const { return beta[0]; }
  double diffusion_deriv(std::span<const double>, double) const { return 0.0; }
  double diffusion_second_deriv(std::span<const double>, double) const { return 0.0; }
  double lamperti(std::span<const double> beta, double x) const { return (x - x_star) / beta[0]; }
  double lamperti_inverse(std::span<const double> beta, double y) const { return x_star + beta[0] * y; }
};

/// dX = (alpha_1 - alpha_2 X) dt + beta sqrt(X) dW on (0, inf).
struct CirFamily {
  double x_star = 1.0;

  std::string name() const { return "cir"; }
  std::size_t drift_dim() const { return 2; }
  std::size_t diffusion_dim() const { return 1; }
  Interval state_interval() const { return {0.0, kInf}; }
  double reference_point() const { return x_star; }
  bool valid_beta(std::span<const double> beta) const { return beta.size() == 1 && beta[0] > 0.0; }
  double basis(std::size_t i, double x) const { return i == 0 ? 1.0 : -x; }
  double basis_deriv(std::size_t i, double) const { return i == 0 ? 0.0 : -1.0; }
  double basis_s(std::size_t i, std::span<const double> beta, double x) const {
    const double b2 = beta[0] * beta[0];
    return i == 0 ? std::log(x / x_star) / b2 : -(x - x_star) / b2;
  }
  double diffusion(std::span<const double> beta, double x) const { return beta[0] * std::sqrt(x); }
  double diffusion_deriv(std::span<const double> beta, double x) const {
    return 0.5 * beta[0] / std::sqrt(x);
  }
  double diffusion_second_deriv(std::span<const double> beta, double x) const {
    return -0.25 * beta[0] / (x * std::sqrt(x));
  }
  double lamperti(std::span<const double> beta, double x) const {
    return 2.0 * (std::sqrt(x) - std::sqrt(x_star)) / beta[0];
  }
  double lamperti_inverse(std::span<const double> beta, double y) const {
    const double r = std::sqrt(x_star) + 0.5 * beta[0] * y;
    return r * r;
  }
};

template <LinearDriftFamily F>
double family_second_deriv(const F& f, std::span<const double> beta, double x) {
  if constexpr (HasFamilySecondDeriv<F>) {
    return f.diffusion_second_deriv(beta, x);
  } else {
    const double h = 1e-5 * std::max(1.0, std::fabs(x));
    return (f.diffusion_deriv(beta, x + h) - f.diffusion_deriv(beta, x - h)) / (2.0 * h);
  }
}

template <LinearDriftFamily F>
void check_params(const F& f, const ParamVector& p) {
  if (p.alpha.size() != f.drift_dim())
    throw UsageError(f.name() + " expects " + std::to_string(f.drift_dim()) + " drift parameter(s)");
  if (p.beta.size() != f.diffusion_dim())
    throw UsageError(f.name() + " expects " + std::to_string(f.diffusion_dim()) + " diffusion parameter(s)");
  if (!f.valid_beta(p.beta)) throw UsageError("invalid diffusion parameter for " + f.name());
}

template <LinearDriftFamily F>
double family_drift(const F& f, std::span<const double> alpha, double x) {
  double b = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) b += alpha[i] * f.basis(i, x);
  return b;
}

/// Transformed drift mu(y) = b/sigma - sigma'/2 and its y-derivative
/// b' - b sigma'/sigma - sigma sigma''/2, both evaluated at x = h^{-1}(y).
struct TransformedDrift {
  double value;
  double deriv;
};

template <LinearDriftFamily F>
TransformedDrift transformed_drift_at(const F& f, const ParamVector& p, double x) {
  double b = 0.0, db = 0.0;
  for (std::size_t i = 0; i < p.alpha.size(); ++i) {
    b += p.alpha[i] * f.basis(i, x);
    db += p.alpha[i] * f.basis_deriv(i, x);
  }
  const double s = f.diffusion(p.beta, x);
  const double ds = f.diffusion_deriv(p.beta, x);
  const double d2s = family_second_deriv(f, p.beta, x);
  return {b / s - 0.5 * ds, db - b * ds / s - 0.5 * s * d2s};
}

struct AuxValues {
  double h;
  double g;
  double s;
};

/// h_beta(x), g(x) = s(x) - log(sigma_beta(x)) / 2 and s(x) = int_{x*}^x b_alpha / sigma_beta^2.
template <LinearDriftFamily F>
AuxValues aux_functions(const F& f, const ParamVector& p, double x) {
  check_params(f, p);
  if (!f.state_interval().contains(x)) throw DomainError("aux_functions: x outside the state interval");
  double s = 0.0;
  for (std::size_t i = 0; i < p.alpha.size(); ++i) s += p.alpha[i] * f.basis_s(i, p.beta, x);
  return {f.lamperti(p.beta, x), s - 0.5 * std::log(f.diffusion(p.beta, x)), s};
}

/// The unit-diffusion process Y = h_beta(X) as a Diffusion.
template <LinearDriftFamily F>
class TransformedModel {
 public:
  TransformedModel(F family, ParamVector params) : f_(std::move(family)), p_(std::move(params)) {
    check_params(f_, p_);
    const Interval x = f_.state_interval();
    interval_ = {f_.lamperti(p_.beta, x.lower), f_.lamperti(p_.beta, x.upper)};
  }

  double drift(double y) const { return transformed_drift_at(f_, p_, f_.lamperti_inverse(p_.beta, y)).value; }
  double diffusion(double) const noexcept { return 1.0; }
  double diffusion_deriv(double) const noexcept { return 0.0; }
  double diffusion_second_deriv(double) const noexcept { return 0.0; }
  Interval state_interval() const noexcept { return interval_; }
  double reference_point() const { return f_.lamperti(p_.beta, f_.reference_point()); }

  const ParamVector& params() const noexcept { return p_; }

 private:
  F f_;
  ParamVector p_;
  Interval interval_;
};

/// bridges[j] holds the draws for the data interval [t_j, t_{j+1}], simulated
/// in transformed space at the reference parameters.
using BridgeSet = std::vector<std::vector<GridPath>>;

namespace detail {

inline void check_bridges(const BridgeSet& bridges, const DiscreteSample& data) {
  if (bridges.size() != data.intervals()) throw UsageError("need one bridge set per data interval");
  for (std::size_t j = 0; j < bridges.size(); ++j) {
    if (bridges[j].empty()) throw UsageError("no bridges for interval " + std::to_string(j));
    const std::size_t n = bridges[j].front().steps();
    for (const auto& b : bridges[j])
      if (b.steps() != n) throw UsageError("bridges of one interval must share their grid");
  }
}

/// Endpoint corrections h_beta(x) - h_beta0(x) at both ends of interval j.
template <LinearDriftFamily F>
std::pair<double, double> ystar_shift(const F& f, std::span<const double> beta,
                                      std::span<const double> beta0, const DiscreteSample& data,
                                      std::size_t j) {
  const double x0 = data.values[j], x1 = data.values[j + 1];
  return {f.lamperti(beta, x0) - f.lamperti(beta0, x0), f.lamperti(beta, x1) - f.lamperti(beta0, x1)};
}

/// Per-interval Monte Carlo average of trapezoid integrals of a vector-valued
/// integrand of x = h_beta^{-1}(Y*), summed over intervals in index order.
/// `point(x, out)` adds the integrand at x into out[0..width).
template <LinearDriftFamily F, class Point>
void integrate_over_bridges(const F& f, std::span<const double> beta, std::span<const double> beta0,
                            const BridgeSet& bridges, const DiscreteSample& data, std::size_t width,
                            Point&& point, std::vector<double>& total, std::vector<double>* mc_variance,
                            unsigned threads) {
  const Interval yrange{f.lamperti(beta, f.state_interval().lower), f.lamperti(beta, f.state_interval().upper)};
  const std::size_t m = bridges.size();
  std::vector<std::vector<double>> means(m, std::vector<double>(width, 0.0));
  std::vector<std::vector<double>> vars(m, std::vector<double>(width, 0.0));
  parallel_for(m, threads, [&](std::size_t j) {
    const auto [left, right] = ystar_shift(f, beta, beta0, data, j);
    const std::size_t r_count = bridges[j].size();
    std::vector<double> acc(width), sum(width, 0.0), sumsq(width, 0.0), pt(width);
    for (const GridPath& z : bridges[j]) {
      const std::size_t n = z.steps();
      const double dn = static_cast<double>(n);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t k = 0; k <= n; ++k) {
        const double dk = static_cast<double>(k);
        const double y = z.values[k] + ((dn - dk) * left + dk * right) / dn;
        if (!(y > yrange.lower && y < yrange.upper))
          throw NumericError("Y* left the range of the transform on interval " + std::to_string(j));
        const double x = f.lamperti_inverse(beta, y);
        std::fill(pt.begin(), pt.end(), 0.0);
        point(x, pt.data());
        const double w = (k == 0 || k == n) ? 0.5 : 1.0;
        for (std::size_t c = 0; c < width; ++c) acc[c] += w * pt[c];
      }
      for (std::size_t c = 0; c < width; ++c) {
        const double integral = acc[c] * z.delta;
        sum[c] += integral;
        sumsq[c] += integral * integral;
      }
    }
    const double r = static_cast<double>(r_count);
    for (std::size_t c = 0; c < width; ++c) {
      means[j][c] = sum[c] / r;
      vars[j][c] = r_count > 1 ? std::max(0.0, (sumsq[c] - sum[c] * sum[c] / r) / (r - 1.0)) / r : 0.0;
    }
  });
  total.assign(width, 0.0);
  if (mc_variance) mc_variance->assign(width, 0.0);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t c = 0; c < width; ++c) {
      total[c] += means[j][c];
      if (mc_variance) (*mc_variance)[c] += vars[j][c];
    }
}

/// Data-only terms shared by q and G:
/// -1/2 sum (h(x_i) - h(x_{i-1}))^2 / dt_i - sum_{i >= 2} log sigma(x_i).
template <LinearDriftFamily F>
double data_terms(const F& f, std::span<const double> beta, const DiscreteSample& data) {
  double out = 0.0;
  for (std::size_t i = 1; i < data.size(); ++i) {
    const double dh = f.lamperti(beta, data.values[i]) - f.lamperti(beta, data.values[i - 1]);
    out -= 0.5 * dh * dh / (data.times[i] - data.times[i - 1]);
    out -= std::log(f.diffusion(beta, data.values[i]));
  }
  return out;
}

}  // namespace detail

/// Y*_t(beta, beta0) for the bridge of data interval j at time t.
template <LinearDriftFamily F>
double ystar(const F& f, std::span<const double> beta, std::span<const double> beta0,
             const GridPath& bridge, const DiscreteSample& data, std::size_t j, double t) {
  if (j >= data.intervals()) throw UsageError("ystar: interval index out of range");
  const double t0 = data.times[j], t1 = data.times[j + 1];
  if (!(t >= t0 && t <= t1)) throw UsageError("ystar: t outside the data interval");
  const double r = (t - bridge.t0) / bridge.delta;
  const std::size_t n = bridge.steps();
  const auto lo = std::min(static_cast<std::size_t>(std::max(0.0, std::floor(r))), n);
  const double frac = std::clamp(r - static_cast<double>(lo), 0.0, 1.0);
  const double z = lo == n || frac == 0.0 ? bridge.values[lo]
                                          : bridge.values[lo] + frac * (bridge.values[lo + 1] - bridge.values[lo]);
  const auto [left, right] = detail::ystar_shift(f, beta, beta0, data, j);
  return z + ((t1 - t) * left + (t - t0) * right) / (t1 - t0);
}

struct QValue {
  double value = 0.0;
  double std_error = 0.0;  // Monte Carlo standard error of the bridge expectations
};

/// Monte Carlo E-step criterion q(alpha, beta) for bridges simulated at beta0.
template <LinearDriftFamily F>
QValue e_step_q_detailed(const F& f, const ParamVector& p, const BridgeSet& bridges,
                         const DiscreteSample& data, std::span<const double> beta0, unsigned threads = 1) {
  check_params(f, p);
  detail::check_bridges(bridges, data);
  std::vector<double> total, var;
  detail::integrate_over_bridges(
      f, p.beta, beta0, bridges, data, 1,
      [&](double x, double* out) {
        const TransformedDrift mu = transformed_drift_at(f, p, x);
        out[0] = mu.deriv + mu.value * mu.value;
      },
      total, &var, threads);
  const AuxValues first = aux_functions(f, p, data.values.front());
  const AuxValues last = aux_functions(f, p, data.values.back());
  QValue q;
  q.value = last.g - first.g + detail::data_terms(f, p.beta, data) - 0.5 * total[0];
  q.std_error = 0.5 * std::sqrt(var[0]);
  if (!std::isfinite(q.value)) throw NumericError("q is not finite");
  return q;
}

template <LinearDriftFamily F>
double e_step_q(const F& f, const ParamVector& p, const BridgeSet& bridges, const DiscreteSample& data,
                std::span<const double> beta0, unsigned threads = 1) {
  return e_step_q_detailed(f, p, bridges, data, beta0, threads).value;
}

struct ExpFamStatistics {
  Eigen::VectorXd H;
  Eigen::MatrixXd B;
  double G = 0.0;
};

/// H, B and G of q(alpha, beta) = alpha'H - alpha'B alpha / 2 + G at fixed beta.
template <LinearDriftFamily F>
ExpFamStatistics expfam_statistics(const F& f, std::span<const double> beta, const BridgeSet& bridges,
                                   const DiscreteSample& data, std::span<const double> beta0,
                                   unsigned threads = 1) {
  if (!f.valid_beta(beta)) throw UsageError("invalid diffusion parameter for " + f.name());
  detail::check_bridges(bridges, data);
  const std::size_t k = f.drift_dim();
  // Layout: [H integrand (k) | B upper triangle (k(k+1)/2) | G integrand (1)]
  const std::size_t width = k + k * (k + 1) / 2 + 1;
  std::vector<double> total;
  detail::integrate_over_bridges(
      f, beta, beta0, bridges, data, width,
      [&](double x, double* out) {
        const double s = f.diffusion(beta, x);
        const double ds = f.diffusion_deriv(beta, x);
        const double dlog = ds / s;
        std::size_t c = k;
        for (std::size_t i = 0; i < k; ++i) {
          const double ai = f.basis(i, x);
          out[i] = ai * dlog - 0.5 * f.basis_deriv(i, x);
          for (std::size_t l = i; l < k; ++l) out[c++] = ai * f.basis(l, x) / (s * s);
        }
        out[c] = 0.25 * (family_second_deriv(f, beta, x) * s - 0.5 * ds * ds);
      },
      total, nullptr, threads);
  ExpFamStatistics st;
  st.H.resize(static_cast<Eigen::Index>(k));
  st.B.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  const double xn = data.values.back(), x1 = data.values.front();
  std::size_t c = k;
  for (std::size_t i = 0; i < k; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    st.H(ii) = f.basis_s(i, beta, xn) - f.basis_s(i, beta, x1) + total[i];
    for (std::size_t l = i; l < k; ++l) {
      const auto ll = static_cast<Eigen::Index>(l);
      st.B(ii, ll) = st.B(ll, ii) = total[c++];
    }
  }
  st.G = -0.5 * std::log(f.diffusion(beta, xn) / f.diffusion(beta, x1)) + detail::data_terms(f, beta, data) +
         total[c];
  return st;
}

/// Evaluates alpha'H - alpha'B alpha / 2 + G.
inline double expfam_q(const ExpFamStatistics& st, std::span<const double> alpha) {
  const Eigen::Map<const Eigen::VectorXd> a(alpha.data(), static_cast<Eigen::Index>(alpha.size()));
  if (a.size() != st.H.size()) throw UsageError("alpha has the wrong dimension");
  return a.dot(st.H) - 0.5 * a.dot(st.B * a) + st.G;
}

/// Solves B alpha = H.
inline Eigen::VectorXd expfam_alpha_hat(const Eigen::VectorXd& H, const Eigen::MatrixXd& B) {
  if (B.rows() != B.cols() || B.rows() != H.size()) throw UsageError("expfam_alpha_hat: dimension mismatch");
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (B + B.transpose()), Eigen::EigenvaluesOnly);
  const Eigen::VectorXd ev = eig.eigenvalues();
  if (eig.info() != Eigen::Success || !(ev.minCoeff() > 1e-12 * ev.cwiseAbs().maxCoeff()))
    throw ConditioningError("B is singular or not positive definite; drift basis functions are not "
                            "linearly independent on the data range");
  return B.ldlt().solve(H);
}

/// max over alpha of q(alpha, beta) = H'B^{-1}H / 2 + G.
inline double expfam_profile(const ExpFamStatistics& st) {
  const Eigen::VectorXd a = expfam_alpha_hat(st.H, st.B);
  return 0.5 * st.H.dot(a) + st.G;
}

template <LinearDriftFamily F>
double expfam_profile(const F& f, std::span<const double> beta, const BridgeSet& bridges,
                      const DiscreteSample& data, std::span<const double> beta0, unsigned threads = 1) {
  return expfam_profile(expfam_statistics(f, beta, bridges, data, beta0, threads));
}

struct Posterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Normal posterior of alpha under a normal prior: precision prior_cov^{-1} + B,
/// mean cov (prior_cov^{-1} prior_mean + H).
inline Posterior conjugate_posterior(const Eigen::VectorXd& prior_mean, const Eigen::MatrixXd& prior_cov,
                                     const Eigen::VectorXd& H, const Eigen::MatrixXd& B) {
  const auto k = prior_mean.size();
  if (prior_cov.rows() != k || prior_cov.cols() != k || H.size() != k || B.rows() != k || B.cols() != k)
    throw UsageError("conjugate_posterior: dimension mismatch");
  const Eigen::LLT<Eigen::MatrixXd> prior(prior_cov);
  if (prior.info() != Eigen::Success) throw ConditioningError("prior covariance is not positive definite");
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (B + B.transpose()));
  if (eig.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff()))
    throw ConditioningError("B is not positive semi-definite");
  const Eigen::MatrixXd prior_precision = prior.solve(Eigen::MatrixXd::Identity(k, k));
  const Eigen::MatrixXd precision = prior_precision + B;
  const Eigen::LLT<Eigen::MatrixXd> post(precision);
  if (post.info() != Eigen::Success) throw ConditioningError("posterior precision is not positive definite");
  Posterior out;
  out.cov = post.solve(Eigen::MatrixXd::Identity(k, k));
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  out.mean = post.solve(prior_precision * prior_mean + H);
  return out;
}

// ---------------------------------------------------------------------------
// Bridge simulation for the E-step

enum class BridgeSampler { exact_mh, approximate };

struct BridgeConfig {
  BridgeSampler sampler = BridgeSampler::exact_mh;
  double steps_per_unit_time = 100.0;
  MhConfig mh{1, 0, 200, 1};  // n_t, iterations (set per call), burn_in, thin
  std::size_t max_attempts = kDefaultMaxAttempts;
};

inline std::size_t steps_for(double horizon, double steps_per_unit_time) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(horizon * steps_per_unit_time)));
}

/// `count` bridges per data interval of Y = h_beta(X) at parameters p, one
/// random substream per interval. Errors carry the interval index.
template <LinearDriftFamily F>
BridgeSet simulate_em_bridges(const F& f, const ParamVector& p, const DiscreteSample& data, std::size_t count,
                              const BridgeConfig& config, const RandomStream& root, unsigned threads = 1) {
  if (count < 1) throw UsageError("need at least one bridge per interval");
  const TransformedModel<F> model(f, p);
  for (double x : data.values)
    if (!f.state_interval().contains(x)) throw DomainError("observation outside the state interval");
  const auto law = config.sampler == BridgeSampler::exact_mh ? make_hitter_law(model, config.mh.hitter) : nullptr;
  BridgeSet out(data.intervals());
  parallel_for(data.intervals(), threads, [&](std::size_t j) {
    const double t0 = data.times[j];
    const double horizon = data.times[j + 1] - t0;
    BridgeProblem problem{f.lamperti(p.beta, data.values[j]), f.lamperti(p.beta, data.values[j + 1]), horizon,
                          steps_for(horizon, config.steps_per_unit_time), Scheme::euler};
    RandomStream rng = root.substream(j);
    std::vector<GridPath>& draws = out[j];
    draws.reserve(count);
    try {
      if (config.sampler == BridgeSampler::approximate) {
        for (std::size_t r = 0; r < count; ++r)
          draws.push_back(sample_bridge_approx(model, problem, config.max_attempts, rng).path);
      } else {
        MhConfig mh = config.mh;
        mh.iterations = mh.burn_in + count * mh.thin;
        mh.max_attempts = config.max_attempts;
        MhResult r = mh_exact_bridge(model, problem, mh, rng, law);
        for (auto& s : r.states) draws.push_back(std::move(s.bridge));
        draws.resize(count);
      }
    } catch (const Error& e) {
      throw Error("interval " + std::to_string(j) + ": " + e.what(), e.code());
    }
    for (auto& d : draws) d.t0 = t0;
  });
  return out;
}

// ---------------------------------------------------------------------------
// EM

enum class MStep { profile, simplex };

struct EmConfig {
  std::size_t bridges_per_interval = 100;
  std::size_t final_bridges = 1000;  // 0 skips the final high-precision iteration
  std::size_t max_iter = 50;
  double tol = 1e-3;
  MStep m_step = MStep::profile;
  bool fix_beta = false;
  BridgeConfig bridge;
  unsigned threads = 1;
};

struct EmIteration {
  ParamVector params;        // after the M-step
  double q_before = 0.0;     // q at the previous parameters
  double q_after = 0.0;      // q at the new parameters, same bridges
  double q_std_error = 0.0;  // Monte Carlo standard error of q_before
  std::size_t bridges = 0;   // per interval
  double seconds = 0.0;
  bool stagnant = false;     // third consecutive iteration without improvement
};

struct EmTrace {
  std::vector<EmIteration> iterations;
  bool converged = false;
  bool stagnation_warning = false;
};

struct EmResult {
  ParamVector estimate;
  EmTrace trace;
};

namespace detail {

inline std::vector<double> log_vector(std::span<const double> v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::log(v[i]);
  return out;
}

inline std::vector<double> exp_vector(std::span<const double> v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::exp(v[i]);
  return out;
}

/// Maximizes q over (alpha, beta) for fixed bridges simulated at `current`.
template <LinearDriftFamily F>
ParamVector m_step(const F& f, const ParamVector& current, const BridgeSet& bridges, const DiscreteSample& data,
                   const EmConfig& config) {
  const std::span<const double> beta0 = current.beta;
  auto alpha_at = [&](std::span<const double> beta) {
    const ExpFamStatistics st = expfam_statistics(f, beta, bridges, data, beta0, config.threads);
    const Eigen::VectorXd a = expfam_alpha_hat(st.H, st.B);
    return std::vector<double>(a.data(), a.data() + a.size());
  };
  if (config.fix_beta) return {alpha_at(current.beta), current.beta};

  if (config.m_step == MStep::profile) {
    auto neg_profile = [&](std::span<const double> log_beta) {
      const std::vector<double> beta = exp_vector(log_beta);
      try {
        return -expfam_profile(f, beta, bridges, data, beta0, config.threads);
      } catch (const NumericError&) {
        return std::numeric_limits<double>::infinity();
      } catch (const ConditioningError&) {
        return std::numeric_limits<double>::infinity();
      }
    };
    std::vector<double> beta;
    if (current.beta.size() == 1) {
      const double u0 = std::log(current.beta[0]);
      const ScalarMinimum m = brent_minimize(
          [&](double u) { return neg_profile(std::span<const double>(&u, 1)); }, u0 - 1.0, u0 + 1.0);
      beta = {std::exp(m.argmin)};
    } else {
      const MinimizeResult m = nelder_mead(neg_profile, log_vector(current.beta));
      beta = exp_vector(m.argmin);
    }
    return {alpha_at(beta), beta};
  }

  // Full simplex on (alpha, log beta).
  const std::size_t k = current.alpha.size();
  std::vector<double> start(current.alpha);
  for (double b : current.beta) start.push_back(std::log(b));
  auto neg_q = [&](std::span<const double> z) {
    ParamVector p{std::vector<double>(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(k)),
                  exp_vector(z.subspan(k))};
    try {
      return -e_step_q(f, p, bridges, data, beta0, config.threads);
    } catch (const NumericError&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  const MinimizeResult m = nelder_mead(neg_q, start);
  return {std::vector<double>(m.argmin.begin(), m.argmin.begin() + static_cast<std::ptrdiff_t>(k)),
          exp_vector(std::span<const double>(m.argmin).subspan(k))};
}

inline double max_abs_change(const ParamVector& a, const ParamVector& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.alpha.size(); ++i) d = std::max(d, std::fabs(a.alpha[i] - b.alpha[i]));
  for (std::size_t i = 0; i < a.beta.size(); ++i) d = std::max(d, std::fabs(a.beta[i] - b.beta[i]));
  return d;
}

}  // namespace detail

/// Monte Carlo EM. Each iteration draws fresh bridges at the current
/// parameters and maximizes q. Iterates until the largest parameter change is
/// below `tol` or `max_iter` is reached, then performs one more iteration with
/// `final_bridges` bridges per interval.
template <LinearDriftFamily F>
EmResult em_fit(const F& f, const DiscreteSample& data, const ParamVector& init, const EmConfig& config,
                const RandomStream& root) {
  check_params(f, init);
  if (config.max_iter < 1) throw UsageError("em_fit needs at least one iteration");
  EmResult out;
  ParamVector current = init;
  std::size_t no_improvement = 0;
  auto iterate = [&](std::size_t index, std::size_t count) {
    const auto start = std::chrono::steady_clock::now();
    const BridgeSet bridges =
        simulate_em_bridges(f, current, data, count, config.bridge, root.substream(index), config.threads);
    EmIteration it;
    const QValue before = e_step_q_detailed(f, current, bridges, data, current.beta, config.threads);
    it.q_before = before.value;
    it.q_std_error = before.std_error;
    it.params = detail::m_step(f, current, bridges, data, config);
    it.q_after = e_step_q(f, it.params, bridges, data, current.beta, config.threads);
    it.bridges = count;
    no_improvement = it.q_after > it.q_before ? 0 : no_improvement + 1;
    it.stagnant = no_improvement >= 3;
    out.trace.stagnation_warning = out.trace.stagnation_warning || it.stagnant;
    it.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const double change = detail::max_abs_change(it.params, current);
    current = it.params;
    out.trace.iterations.push_back(std::move(it));
    return change;
  };
  std::size_t index = 0;
  for (; index < config.max_iter; ++index) {
    if (iterate(index, config.bridges_per_interval) < config.tol) {
      out.trace.converged = true;
      ++index;
      break;
    }
  }
  if (config.final_bridges > 0) iterate(index, config.final_bridges);
  out.estimate = current;
  return out;
}

}  // namespace dbridge
