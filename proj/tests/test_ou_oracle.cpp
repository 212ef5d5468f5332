#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <vector>

#include "dbridge/model.hpp"
#include "dbridge/ou_oracle.hpp"
#include "dbridge/stats.hpp"

using namespace dbridge;

namespace {

double gk(auto f, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 20, 1e-15);
}

/// Bridge transition density of X_t given X_s = x and X_delta = b, first ordering.
double q_forward(const OrnsteinUhlenbeck& m, double x, double s, double y, double t, double b, double delta) {
  return m.transition_density(t - s, x, y) * m.transition_density(delta - t, y, b) /
         m.transition_density(delta - s, x, b);
}

/// Same density written with the time-reversed transitions.
double q_reversed(const OrnsteinUhlenbeck& m, double x, double s, double y, double t, double b, double delta) {
  return m.transition_density(t - s, y, x) * m.transition_density(delta - t, b, y) /
         m.transition_density(delta - s, b, x);
}

}  // namespace

TEST(OuParams, Validation) {
  EXPECT_THROW(OuParams(0.0, 1.0), UsageError);
  EXPECT_THROW(OuParams(1.0, -1.0), UsageError);
  EXPECT_NO_THROW(OuParams(OrnsteinUhlenbeck(0.5, 1.0)));
}

TEST(OuBridgeWeight, BranchesAgreeAndPinEnds) {
  EXPECT_EQ(ou_bridge_weight(0.5, 0.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(ou_bridge_weight(0.5, 1.0, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(ou_bridge_weight(40.0, 1.0, 1.0), 1.0);
  // Just above the switch, compare with the direct sinh ratio.
  const double theta = 30.5, t = 0.9;
  EXPECT_NEAR(ou_bridge_weight(theta, t, 1.0), std::sinh(theta * t) / std::sinh(theta), 1e-14);
  EXPECT_TRUE(std::isfinite(ou_bridge_weight(500.0, 0.5, 10.0)));
  EXPECT_GE(ou_bridge_weight(500.0, 0.5, 10.0), 0.0);
}

TEST(SampleOuBridgeExact, EndpointsBitExact) {
  RandomStream r(1);
  for (double theta : {0.5, 4.0, 100.0}) {
    for (int i = 0; i < 50; ++i) {
      const double a = 3.0 * r.normal(), b = 3.0 * r.normal();
      const GridPath p = sample_ou_bridge_exact(OuParams(theta, 1.3), a, b, 1.0, 100, r);
      ASSERT_EQ(p.front(), a);
      ASSERT_EQ(p.back(), b);
      for (double v : p.values) ASSERT_TRUE(std::isfinite(v));
    }
  }
}

TEST(SampleOuBridgeExact, RejectsBadTimes) {
  RandomStream r(1);
  const std::vector<double> not_from_zero{0.1, 0.5, 1.0}, not_increasing{0.0, 0.5, 0.5, 1.0}, too_short{0.0};
  EXPECT_THROW(sample_ou_bridge_exact(OuParams(), 0.0, 0.0, not_from_zero, r), UsageError);
  EXPECT_THROW(sample_ou_bridge_exact(OuParams(), 0.0, 0.0, not_increasing, r), UsageError);
  EXPECT_THROW(sample_ou_bridge_exact(OuParams(), 0.0, 0.0, too_short, r), UsageError);
}

TEST(SampleOuBridgeExact, MomentsMatchGaussianConditioningAtEveryGridTime) {
  const OuParams p(0.5, 1.0);
  RandomStream r(2);
  const int n = 25000;
  const std::size_t steps = 10;
  std::vector<std::vector<double>> cols(steps + 1, std::vector<double>(n));
  for (int i = 0; i < n; ++i) {
    const GridPath path = sample_ou_bridge_exact(p, -1.0, 1.0, 1.0, steps, r);
    for (std::size_t k = 0; k <= steps; ++k) cols[k][static_cast<std::size_t>(i)] = path.values[k];
  }
  for (std::size_t k = 1; k < steps; ++k) {
    const GaussianMoments g = ou_bridge_marginal(p, -1.0, 1.0, 1.0, 0.1 * static_cast<double>(k));
    EXPECT_NEAR(mean(cols[k]), g.mean, 3.0 * std_error_of_mean(cols[k])) << k;
    EXPECT_NEAR(variance(cols[k]), g.variance, 3.0 * std_error_of_variance(cols[k])) << k;
  }
}

TEST(SampleOuBridgeExact, ZeroZeroMidpointCentered) {
  const OuParams p(0.5, 1.0);
  RandomStream r(3);
  std::vector<double> mid(25000);
  for (auto& v : mid) v = sample_ou_bridge_exact(p, 0.0, 0.0, 1.0, 100, r).values[50];
  EXPECT_NEAR(mean(mid), 0.0, 3.0 * std_error_of_mean(mid));
  EXPECT_NEAR(variance(mid), ou_bridge_marginal(p, 0.0, 0.0, 1.0, 0.5).variance, 3.0 * std_error_of_variance(mid));
}

TEST(OuBridgeMarginal, Examples) {
  EXPECT_EQ(ou_bridge_marginal(OuParams(0.5, 1.0), 0.0, 0.0, 2.0, 1.0).mean, 0.0);
  const GaussianMoments bb = ou_bridge_marginal(OuParams(1e-6, 1.7), 0.0, 0.0, 2.0, 1.0);
  EXPECT_NEAR(bb.variance, 1.7 * 1.7 * 2.0 / 4.0, 1e-5);
  EXPECT_THROW(ou_bridge_marginal(OuParams(), 0.0, 0.0, 1.0, 1.0), UsageError);
  EXPECT_THROW(ou_bridge_marginal(OuParams(), 0.0, 0.0, 1.0, 0.0), UsageError);
}

TEST(OuBridgeMarginal, MatchesQuadratureOfBridgeDensity) {
  const OrnsteinUhlenbeck m(0.5, 1.0);
  const OuParams p(0.5, 1.0);
  for (auto [a, b, t] : {std::tuple{0.0, 1.0, 0.5}, std::tuple{-3.0, -2.0, 0.5}, std::tuple{-1.0, 2.0, 0.2}}) {
    auto q = [&](double y) { return q_forward(m, a, 0.0, y, t, b, 1.0); };
    const GaussianMoments g = ou_bridge_marginal(p, a, b, 1.0, t);
    const double lo = g.mean - 15.0, hi = g.mean + 15.0;
    const double mass = gk(q, lo, hi);
    const double mu = gk([&](double y) { return y * q(y); }, lo, hi);
    const double var = gk([&](double y) { return (y - mu) * (y - mu) * q(y); }, lo, hi);
    EXPECT_NEAR(mass, 1.0, 1e-10);
    EXPECT_NEAR(g.mean, mu, 1e-8);
    EXPECT_NEAR(g.variance, var, 1e-8);
  }
}

TEST(OuBridgeDensity, BothOrderingsAgree) {
  const OrnsteinUhlenbeck m(0.5, 1.0);
  for (double x : {-2.0, 0.0, 1.0})
    for (double s : {0.0, 0.3})
      for (double t : {0.4, 0.8})
        for (double y : {-1.0, 0.2, 1.5})
          for (double b : {-1.0, 0.5}) {
            const double f = q_forward(m, x, s, y, t, b, 1.0);
            const double r = q_reversed(m, x, s, y, t, b, 1.0);
            EXPECT_NEAR(f, r, 1e-10);
          }
}
