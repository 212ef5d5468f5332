#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dbridge/bridge_exact.hpp"
#include "dbridge/ou_oracle.hpp"
#include "dbridge/stats.hpp"

using namespace dbridge;

namespace {

GridPath gp(std::vector<double> v) {
  const double delta = 1.0 / static_cast<double>(v.size() - 1);
  return GridPath(0.0, delta, std::move(v));
}

}  // namespace

TEST(Hits, Examples) {
  const GridPath x = gp({0.0, 0.5, -0.2, 1.0});
  EXPECT_TRUE(hits(x, x));
  EXPECT_FALSE(hits(x, gp({1.0, 1.5, 0.8, 2.0})));
  EXPECT_TRUE(hits(gp({0, 0}), gp({-1, 1})));
  EXPECT_TRUE(hits(gp({0, 3, 3}), gp({1, 2, 5})));
  EXPECT_THROW(hits(gp({0, 0}), gp({0, 0, 0})), UsageError);
}

TEST(Hits, TinyDifferencesDoNotUnderflow) {
  // Products of these differences would underflow to zero.
  EXPECT_FALSE(hits(gp({1e-200, 2e-200}), gp({0.0 + 1e-201, 1e-201})));
  EXPECT_TRUE(hits(gp({1e-200, -1e-200}), gp({0.0, 0.0})));
}

TEST(RhoHat, Examples) {
  const std::vector<std::size_t> ones{1, 1, 1}, seq{1, 2, 3};
  EXPECT_EQ(rho_hat(ones), 1.0);
  EXPECT_EQ(rho_hat(seq), 2.0);
  EXPECT_THROW(rho_hat(std::span<const std::size_t>{}), UsageError);
}

TEST(MhAccept, EqualEstimatesAlwaysAccept) {
  RandomStream r(1);
  for (int i = 0; i < 1000; ++i) EXPECT_TRUE(detail::mh_accept(r.uniform(), 3.5, 3.5));
  EXPECT_TRUE(detail::mh_accept(0.9, 1.0, 2.0));
  EXPECT_FALSE(detail::mh_accept(0.6, 2.0, 1.0));
  EXPECT_TRUE(detail::mh_accept(0.4, 2.0, 1.0));
}

TEST(PdeltaBHits, FusedTestMatchesMaterializedPath) {
  const OrnsteinUhlenbeck ou(0.5, 1.0);
  const BridgeProblem p{0.0, 0.0, 1.0, 100};
  RandomStream r(3);
  const GridPath x = sample_ou_bridge_exact(OuParams(0.5, 1.0), 0.0, 0.0, 1.0, 100, r);
  const RandomStream root(4);
  for (std::uint64_t j = 0; j < 2000; ++j) {
    RandomStream a = root.substream(j), b = root.substream(j);
    const bool fused = detail::pdelta_b_hits(ou, x.values, p, a);
    const bool full = hits(x, simulate_pdelta_b(ou, 0.0, 1.0, 100, Scheme::euler, b));
    ASSERT_EQ(fused, full) << j;
  }
}

TEST(SampleT, MeanTimesHitRateIsOne) {
  const OrnsteinUhlenbeck ou(0.5, 1.0);
  const BridgeProblem p{0.0, 0.0, 1.0, 100};
  RandomStream r(5);
  const GridPath x = sample_ou_bridge_exact(OuParams(0.5, 1.0), 0.0, 0.0, 1.0, 100, r);
  const int n = 100000;
  std::vector<double> t(n);
  for (auto& v : t) v = static_cast<double>(sample_T(ou, x, p, r));
  const double pi = estimate_pi_mc(ou, x, p, n, r);
  const double mt = mean(t);
  // Delta method: SE of mt * pi.
  const double se_t = std_error_of_mean(t);
  const double se_pi = std::sqrt(pi * (1 - pi) / n);
  const double se = std::hypot(se_t * pi, se_pi * mt);
  EXPECT_LT(std::fabs(mt * pi - 1.0), 3.0 * se);
  for (double v : t) ASSERT_GE(v, 1.0);
}

TEST(SampleT, BudgetErrorForUnreachablePath) {
  const OrnsteinUhlenbeck ou(0.5, 1.0);
  const BridgeProblem p{50.0, 50.0, 1.0, 10};
  const GridPath far = gp(std::vector<double>(11, 50.0));
  RandomStream r(6);
  EXPECT_THROW(sample_T(ou, far, BridgeProblem{50.0, 0.0, 1.0, 10}, r, 5), HittingBudgetError);
  EXPECT_EQ(estimate_pi_mc(ou, far, BridgeProblem{50.0, 0.0, 1.0, 10}, 20, r), 0.0);
  EXPECT_THROW(sample_T(ou, gp({0, 1}), p, r, 5), UsageError);
}

TEST(PseudoMarginalChain, RejectionRetainsStateBitExactly) {
  const OrnsteinUhlenbeck ou(0.5, 1.0);
  MhConfig cfg;
  cfg.n_t = 3;
  PseudoMarginalChain<OrnsteinUhlenbeck> chain(ou, BridgeProblem{-3.0, -2.0, 1.0, 100}, cfg, RandomStream(7));
  int rejected = 0, accepted = 0;
  for (int i = 0; i < 400; ++i) {
    const PmState before = chain.state();
    if (chain.step()) {
      ++accepted;
    } else {
      ++rejected;
      ASSERT_EQ(chain.state(), before);
    }
    const PmState& s = chain.state();
    ASSERT_EQ(s.t_vector.size(), 3u);
    ASSERT_EQ(s.rho_hat, rho_hat(s.t_vector));
    ASSERT_GE(s.rho_hat, 1.0);
    ASSERT_EQ(s.bridge.front(), -3.0);
    ASSERT_EQ(s.bridge.back(), -2.0);
  }
  EXPECT_GT(rejected, 0);
  EXPECT_GT(accepted, 0);
  EXPECT_EQ(chain.iterations(), 400u);
  EXPECT_EQ(chain.accepted(), static_cast<std::size_t>(accepted));
}

TEST(MhExactBridge, ConfigurationErrors) {
  const OrnsteinUhlenbeck ou(0.5, 1.0);
  MhConfig cfg;
  cfg.iterations = 10;
  cfg.burn_in = 10;
  EXPECT_THROW(mh_exact_bridge(ou, BridgeProblem{}, cfg, RandomStream(1)), UsageError);
  cfg.burn_in = 0;
  cfg.n_t = 0;
  EXPECT_THROW(mh_exact_bridge(ou, BridgeProblem{}, cfg, RandomStream(1)), UsageError);
  cfg.n_t = 1;
  cfg.max_attempts = 10;
  EXPECT_THROW(mh_exact_bridge(ou, BridgeProblem{-5.0, 5.0, 0.01, 1}, cfg, RandomStream(1)), ChainInitError);
}

TEST(MhExactBridge, OutputShapeAndDeterminism) {
  const Hyperbolic hyp(1.0, 1.0);
  MhConfig cfg;
  cfg.n_t = 2;
  cfg.iterations = 300;
  cfg.burn_in = 100;
  cfg.thin = 4;
  const BridgeProblem p{0.0, 1.0, 1.0, 50};
  const MhResult a = mh_exact_bridge(hyp, p, cfg, RandomStream(8));
  const MhResult b = mh_exact_bridge(hyp, p, cfg, RandomStream(8));
  EXPECT_EQ(a.states.size(), 50u);
  EXPECT_EQ(a.rho_trace.size(), 300u);
  EXPECT_GT(a.acceptance_rate, 0.0);
  EXPECT_LE(a.acceptance_rate, 1.0);
  ASSERT_EQ(a.states.size(), b.states.size());
  for (std::size_t i = 0; i < a.states.size(); ++i) EXPECT_EQ(a.states[i], b.states[i]);
  double s = 0.0;
  for (const auto& st : a.states) s += st.rho_hat;
  EXPECT_DOUBLE_EQ(a.mean_rho_hat, s / static_cast<double>(a.states.size()));
}

namespace {

/// Standard error of a correlated series by non-overlapping batch means.
double batch_se(const std::vector<double>& v, std::size_t batches = 50) {
  const std::size_t len = v.size() / batches;
  std::vector<double> means(batches);
  for (std::size_t k = 0; k < batches; ++k)
    means[k] = mean(std::span<const double>(v).subspan(k * len, len));
  return std_error_of_mean(means);
}

std::vector<double> mh_midpoints(const BridgeProblem& p, HitterStart hitter, std::uint64_t seed) {
  MhConfig cfg;
  cfg.n_t = 10;
  cfg.burn_in = 1000;
  cfg.iterations = 1000 + 20000;
  cfg.hitter = hitter;
  const MhResult r = mh_exact_bridge(OrnsteinUhlenbeck(0.5, 1.0), p, cfg, RandomStream(seed));
  std::vector<double> mid;
  for (const auto& s : r.states) mid.push_back(s.bridge.values[p.steps / 2]);
  return mid;
}

}  // namespace

TEST(InvariantLaw, MatchesOuStationaryQuantiles) {
  const InvariantLaw law(OrnsteinUhlenbeck(0.5, 1.3));
  const double sd = 1.3;  // sigma^2 / (2 theta) = 1.69
  for (double u : {0.001, 0.1, 0.5, 0.9, 0.999})
    EXPECT_NEAR(law.quantile(u), sd * inverse_normal_cdf(u), 2e-3) << u;
  EXPECT_THROW(law.quantile(0.0), UsageError);
  const InvariantLaw cir(SquareRootDiffusion(1.0, 1.0, 0.5));
  RandomStream r(1);
  for (int i = 0; i < 1000; ++i) ASSERT_GT(cir.sample(r), 0.0);
}

TEST(MhExactBridge, RemovesBiasOfApproximateSampler) {
  const BridgeProblem p{-3.0, -2.0, 1.0, 100};
  const std::vector<double> mid = mh_midpoints(p, HitterStart::invariant, 9);
  const double exact = ou_bridge_marginal(OuParams(0.5, 1.0), -3.0, -2.0, 1.0, 0.5).mean;
  const auto approx = sample_bridges_approx(OrnsteinUhlenbeck(0.5, 1.0), p, 20000, RandomStream(10));
  std::vector<double> a;
  for (const auto& s : approx) a.push_back(s.path.values[50]);
  EXPECT_GT(std::fabs(mean(a) - exact), 0.1);
  // Grid splicing leaves an O(sqrt(step)) residual; 0.01 covers it at N = 100.
  EXPECT_NEAR(mean(mid), exact, 4.0 * batch_se(mid) + 0.01);
}

TEST(MhExactBridge, TransitionStartedHittersLeaveResidualBias) {
  const BridgeProblem p{-3.0, -2.0, 1.0, 100};
  const std::vector<double> mid = mh_midpoints(p, HitterStart::transition, 9);
  const double exact = ou_bridge_marginal(OuParams(0.5, 1.0), -3.0, -2.0, 1.0, 0.5).mean;
  EXPECT_GT(mean(mid) - exact, 6.0 * batch_se(mid));
}
