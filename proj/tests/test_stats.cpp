#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "dbridge/benchmark.hpp"
#include "dbridge/stats.hpp"

using namespace dbridge;

TEST(Moments, Examples) {
  const std::vector<double> x{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(mean(x), 2.5);
  EXPECT_DOUBLE_EQ(variance(x), 5.0 / 3.0);
  EXPECT_DOUBLE_EQ(std_error_of_mean(x), std::sqrt(5.0 / 12.0));
  EXPECT_THROW(mean(std::vector<double>{}), UsageError);
  EXPECT_THROW(variance(std::vector<double>{1.0}), UsageError);
  EXPECT_THROW(SampleSet({}, "empty"), UsageError);
}

TEST(Moments, VarianceStdErrorMatchesGaussianFormula) {
  RandomStream r(1);
  std::vector<double> x(200000);
  for (auto& v : x) v = r.normal();
  // For normal data the SE of s^2 is sigma^2 sqrt(2 / (n - 1)).
  EXPECT_NEAR(std_error_of_variance(x), std::sqrt(2.0 / 199999.0), 2e-4);
}

TEST(KolmogorovQ, KnownValues) {
  EXPECT_NEAR(kolmogorov_q(1.36), 0.0494, 5e-4);
  EXPECT_NEAR(kolmogorov_q(1.63), 0.0100, 2e-4);
  EXPECT_NEAR(kolmogorov_q(0.5), 0.9639, 5e-4);
  EXPECT_EQ(kolmogorov_q(0.0), 1.0);
  EXPECT_LT(kolmogorov_q(10.0), 1e-80);
}

TEST(KolmogorovQ, SeriesAgreeAroundTheSwitch) {
  // Evaluate the two series directly on either side of the switch.
  for (double l : {0.9, 1.0, 1.1, 1.17, 1.19, 1.3}) {
    double alt = 0.0;
    for (int k = 1; k <= 100; ++k) alt += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * l * l);
    EXPECT_NEAR(kolmogorov_q(l), alt, 1e-12) << l;
  }
}

TEST(KsTwoSample, Examples) {
  const std::vector<double> a{1, 2, 3}, b{4, 5, 6};
  EXPECT_DOUBLE_EQ(ks_two_sample(a, b).statistic, 1.0);
  EXPECT_DOUBLE_EQ(ks_two_sample(a, a).statistic, 0.0);
  EXPECT_DOUBLE_EQ(ks_two_sample(a, a).p_value, 1.0);
  const std::vector<double> ties{1, 1, 2, 2}, other{1, 2, 2, 2};
  EXPECT_DOUBLE_EQ(ks_two_sample(ties, other).statistic, 0.25);
  EXPECT_THROW(ks_two_sample(a, std::vector<double>{}), UsageError);
  EXPECT_DOUBLE_EQ(ks_two_sample(SampleSet(a), SampleSet(b)).statistic, 1.0);
}

TEST(KsTwoSample, CalibratedUnderTheNull) {
  const RandomStream root(2);
  int rejections = 0;
  const int reps = 400;
  for (int k = 0; k < reps; ++k) {
    RandomStream r = root.substream(static_cast<std::uint64_t>(k));
    std::vector<double> x(500), y(500);
    for (auto& v : x) v = r.normal();
    for (auto& v : y) v = r.normal();
    if (ks_two_sample(x, y).p_value < 0.05) ++rejections;
  }
  // Asymptotic p-values are slightly conservative at n = 500.
  const double rate = rejections / static_cast<double>(reps);
  EXPECT_GT(rate, 0.01);
  EXPECT_LT(rate, 0.09);
}

TEST(KsTwoSample, DetectsShift) {
  RandomStream r(3);
  std::vector<double> x(2000), y(2000);
  for (auto& v : x) v = r.normal();
  for (auto& v : y) v = r.normal() + 0.2;
  EXPECT_LT(ks_two_sample(x, y).p_value, 1e-4);
}

TEST(Quantiles, TypeSevenRule) {
  const std::vector<double> s{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(quantile_sorted(s, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile_sorted(s, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(quantile_sorted(s, 0.5), 2.5);
  EXPECT_THROW(quantile_sorted(s, 1.5), UsageError);
}

TEST(QqData, DiagonalOffsetAndOrderInvariance) {
  std::vector<double> x{3, 1, 4, 1, 5, 9, 2, 6, 5, 3};
  auto qq = qq_data(x, x, 7);
  ASSERT_EQ(qq.size(), 7u);
  for (auto [a, b] : qq) EXPECT_EQ(a, b);
  std::vector<double> shifted = x;
  for (auto& v : shifted) v += 2.0;
  for (auto [a, b] : qq_data(x, shifted, 7)) EXPECT_DOUBLE_EQ(b - a, 2.0);
  std::vector<double> perm = x;
  std::reverse(perm.begin(), perm.end());
  EXPECT_EQ(qq_data(x, shifted, 5), qq_data(perm, shifted, 5));
  EXPECT_THROW(qq_data(x, x, 0), UsageError);
}

TEST(Acf, Examples) {
  const std::vector<double> c(10, 2.0);
  EXPECT_EQ(acf(c, 3), (std::vector<double>{1, 0, 0, 0}));
  const std::vector<double> alt{1, -1, 1, -1, 1, -1, 1, -1};
  const auto a = acf(alt, 2);
  EXPECT_DOUBLE_EQ(a[1], -7.0 / 8.0);
  EXPECT_DOUBLE_EQ(a[2], 6.0 / 8.0);
  EXPECT_THROW(acf(alt, 8), UsageError);
}

TEST(Acf, WhiteNoiseWithinBartlettBand) {
  RandomStream r(4);
  std::vector<double> x(10000);
  for (auto& v : x) v = r.normal();
  const auto a = acf(x, 20);
  int outside = 0;
  for (std::size_t k = 1; k <= 20; ++k)
    if (std::fabs(a[k]) > 1.96 / std::sqrt(10000.0)) ++outside;
  EXPECT_LE(outside, 4);
}

TEST(LinearFit, ExactLineAndErrors) {
  const std::vector<double> x{0, 1, 2, 3}, y{1, 3, 5, 7};
  const LinearFit f = linear_fit(x, y);
  EXPECT_DOUBLE_EQ(f.slope, 2.0);
  EXPECT_DOUBLE_EQ(f.intercept, 1.0);
  EXPECT_DOUBLE_EQ(f.r_squared, 1.0);
  EXPECT_THROW(linear_fit(std::vector<double>{1, 1}, std::vector<double>{1, 2}), ConditioningError);
  EXPECT_THROW(linear_fit(x, std::vector<double>{1}), UsageError);
}

TEST(Benchmark, EmptyJobListGivesEmptyTable) {
  const OrnsteinUhlenbeck ou(0.5, 1.0);
  EXPECT_TRUE(benchmark_table(ou, std::span<const BenchmarkJob>{}, RandomStream(1)).empty());
}

TEST(Benchmark, RowsAreConsistentAndReproducible) {
  const OrnsteinUhlenbeck ou(0.5, 1.0);
  std::vector<BenchmarkJob> jobs{{"zero", BridgeProblem{0.0, 0.0, 1.0, 100}, 500, 200},
                                 {"far", BridgeProblem{-5.0, 5.0, 0.01, 1}, 5, 0}};
  const auto rows = benchmark_table(ou, std::span<const BenchmarkJob>(jobs), RandomStream(5),
                                    ou_oracle_source(OuParams(0.5, 1.0)), 1000);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_TRUE(rows[0].error.empty());
  EXPECT_EQ(rows[0].acceptances, 500u);
  EXPECT_EQ(rows[0].rejections, rows[0].attempts - 500);
  EXPECT_DOUBLE_EQ(rows[0].rejection_prob, static_cast<double>(rows[0].rejections) / rows[0].attempts);
  ASSERT_TRUE(rows[0].one_minus_pi.has_value());
  EXPECT_GE(*rows[0].one_minus_pi, 0.0);
  EXPECT_LE(*rows[0].one_minus_pi, 1.0);
  EXPECT_FALSE(rows[1].error.empty());

  const auto again = benchmark_table(ou, std::span<const BenchmarkJob>(jobs), RandomStream(5),
                                     ou_oracle_source(OuParams(0.5, 1.0)), 1000);
  EXPECT_EQ(again[0].attempts, rows[0].attempts);
  EXPECT_EQ(again[0].one_minus_pi, rows[0].one_minus_pi);
}

TEST(Benchmark, MissFrequencyExtremes) {
  const OrnsteinUhlenbeck ou(0.5, 1.0);
  const BridgeProblem p{50.0, 50.0, 1.0, 50};
  RandomStream r(6);
  // Far from the origin-started diffusions: always missed.
  std::vector<GridPath> far(100, GridPath(0.0, 0.02, std::vector<double>(51, 50.0)));
  EXPECT_EQ(miss_frequency(ou, std::span<const GridPath>(far), BridgeProblem{50.0, 0.0, 1.0, 50}, r), 1.0);
  // A path that jumps from -50 to 50 crosses everything.
  std::vector<double> v(51, 50.0);
  v[0] = -50.0;
  std::vector<GridPath> crossing(100, GridPath(0.0, 0.02, v));
  EXPECT_EQ(miss_frequency(ou, std::span<const GridPath>(crossing), BridgeProblem{-50.0, 50.0, 1.0, 50}, r), 0.0);
  EXPECT_THROW(miss_frequency(ou, std::span<const GridPath>{}, p, r), UsageError);
}
