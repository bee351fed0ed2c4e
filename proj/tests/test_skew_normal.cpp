#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "ismra/skew_normal.hpp"

using namespace ismra;

TEST(SkewNormal, RoundTripRecoversMoments) {
    for (double g = -0.9; g <= 0.9 + 1e-12; g += 0.05) {
        const Moments in{1.3, 2.1, g};
        const auto p = fit_skew_normal(in);
        ASSERT_TRUE(p.has_value()) << g;
        const Moments out = skew_normal_moments(*p);
        EXPECT_NEAR(out.mean, in.mean, 1e-6);
        EXPECT_NEAR(out.sd, in.sd, 1e-6);
        EXPECT_NEAR(out.skewness, in.skewness, 1e-6);
    }
}

TEST(SkewNormal, HalfSkewExample) {
    const auto p = fit_skew_normal({0.0, 1.0, 0.5});
    ASSERT_TRUE(p);
    const Moments m = skew_normal_moments(*p);
    EXPECT_NEAR(m.mean, 0.0, 1e-6);
    EXPECT_NEAR(m.sd, 1.0, 1e-6);
    EXPECT_NEAR(m.skewness, 0.5, 1e-6);
    EXPECT_GT(p->shape, 0.0);
}

TEST(SkewNormal, SymmetricCaseIsNormal) {
    const auto s = summarize({2.0, 3.0, 0.0}, [](double) { return 0.0; });
    EXPECT_EQ(s.method, IntervalMethod::SkewNormal);
    EXPECT_NEAR(s.ci_low, 2.0 - 1.959963984540054 * 3.0, 1e-6);
    EXPECT_NEAR(s.ci_high, 2.0 + 1.959963984540054 * 3.0, 1e-6);
}

TEST(SkewNormal, InfeasibleSkewFallsBack) {
    EXPECT_FALSE(fit_skew_normal({0.0, 1.0, 0.9952}));
    EXPECT_FALSE(fit_skew_normal({0.0, 1.0, -1.5}));
    const auto s = summarize({0.0, 1.0, 1.2}, [](double q) { return q; });
    EXPECT_EQ(s.method, IntervalMethod::EmpiricalQuantile);
    EXPECT_NEAR(s.ci_low, 0.025, 1e-15);
    EXPECT_NEAR(s.ci_high, 0.975, 1e-15);
    EXPECT_STREQ(to_string(s.method), "empirical_quantile");
}

TEST(SkewNormal, IntervalContainsNinetyFivePercent) {
    const SkewNormalParams p{0.5, 2.0, 4.0};
    const boost::math::skew_normal_distribution<double> d(p.location, p.scale, p.shape);
    const auto s = summarize(skew_normal_moments(p), [](double) { return 0.0; });
    EXPECT_NEAR(boost::math::cdf(d, s.ci_high) - boost::math::cdf(d, s.ci_low), 0.95, 1e-6);
}

TEST(Atoms, IdenticalValuesAreDegenerate) {
    const std::vector<double> v(10, 0.7), w(10, 0.1);
    const auto s = summarize_atoms(v, w);
    EXPECT_EQ(s.method, IntervalMethod::Degenerate);
    EXPECT_DOUBLE_EQ(s.mean, 0.7);
    EXPECT_EQ(s.sd, 0.0);
    EXPECT_EQ(s.ci_low, s.ci_high);
}

TEST(Atoms, WeightedMoments) {
    const std::vector<double> v{0.0, 1.0, 3.0}, w{0.5, 0.25, 0.25};
    const Moments m = weighted_moments(v, w);
    EXPECT_DOUBLE_EQ(m.mean, 1.0);
    EXPECT_NEAR(m.sd * m.sd, 0.5 * 1.0 + 0.25 * 0.0 + 0.25 * 4.0, 1e-14);
    EXPECT_NEAR(m.skewness, (0.5 * -1.0 + 0.25 * 8.0) / std::pow(1.5, 1.5), 1e-14);
}

TEST(Atoms, WeightedQuantile) {
    const std::vector<double> v{3.0, 1.0, 2.0, 4.0}, w{0.1, 0.4, 0.4, 0.1};
    EXPECT_EQ(weighted_quantile(v, w, 0.025), 1.0);
    EXPECT_EQ(weighted_quantile(v, w, 0.4), 1.0);
    EXPECT_EQ(weighted_quantile(v, w, 0.5), 2.0);
    EXPECT_EQ(weighted_quantile(v, w, 0.975), 4.0);
}

TEST(Mixture, MomentsMatchSampling) {
    const std::vector<double> w{0.7, 0.3}, mu{0.0, 3.0}, var{1.0, 0.25};
    const Moments m = mixture_moments(w, mu, var);
    std::mt19937_64 rng(9);
    std::bernoulli_distribution pick(0.3);
    std::normal_distribution<double> z(0.0, 1.0);
    double s1 = 0.0, s2 = 0.0, s3 = 0.0;
    const int n = 400000;
    std::vector<double> xs(n);
    for (auto& x : xs) {
        x = pick(rng) ? 3.0 + 0.5 * z(rng) : z(rng);
        s1 += x;
    }
    const double mean = s1 / n;
    for (double x : xs) {
        s2 += (x - mean) * (x - mean);
        s3 += (x - mean) * (x - mean) * (x - mean);
    }
    EXPECT_NEAR(m.mean, 0.9, 1e-12);
    EXPECT_NEAR(m.mean, mean, 0.01);
    EXPECT_NEAR(m.sd, std::sqrt(s2 / n), 0.01);
    EXPECT_NEAR(m.skewness, s3 / n / std::pow(s2 / n, 1.5), 0.02);
}

TEST(Mixture, QuantileInvertsCdf) {
    const std::vector<double> w{1.0}, mu{2.0}, var{4.0};
    EXPECT_NEAR(mixture_quantile(w, mu, var, 0.975), 2.0 + 2.0 * 1.959963984540054, 1e-9);
    const std::vector<double> w2{0.5, 0.5}, mu2{-1.0, 1.0}, var2{1.0, 1.0};
    EXPECT_NEAR(mixture_quantile(w2, mu2, var2, 0.5), 0.0, 1e-9);
}
