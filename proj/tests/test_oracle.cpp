#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "ismra/oracle.hpp"
#include "support.hpp"

using namespace ismra;
using ismra::oracle::DenseGP;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

DenseGP make_gp(std::size_t n, std::uint64_t seed, int p, HyperParams psi) {
    DenseGP gp;
    gp.points = testing_support::random_points(n, seed);
    gp.X = testing_support::random_covariates(n, p, seed + 1);
    gp.psi = psi;
    return gp;
}

}  // namespace

TEST(Simulate, NoNoiseNoFieldIsFixedEffects) {
    auto gp = make_gp(30, 1, 3, HyperParams{-kInf, 0.0, 0.0, -kInf});
    const Eigen::VectorXd beta = Eigen::Vector3d(1.0, -2.0, 0.5);
    const Eigen::VectorXd y = oracle::simulate(gp, beta, 5);
    EXPECT_EQ(y, gp.X * beta);
}

TEST(Simulate, PureNoiseHasUnitSd) {
    auto gp = make_gp(2000, 2, 1, HyperParams{-kInf, 0.0, 0.0, 0.0});
    const Eigen::VectorXd beta = Eigen::VectorXd::Constant(1, 3.0);
    const Eigen::VectorXd r = oracle::simulate(gp, beta, 6) - gp.X * beta;
    const double mean = r.mean();
    const double sd = std::sqrt((r.array() - mean).square().sum() / static_cast<double>(r.size() - 1));
    EXPECT_NEAR(sd, 1.0, 0.05);
}

TEST(Simulate, DeterministicUnderSeed) {
    auto gp = make_gp(100, 3, 2, HyperParams{0.5, 1.0, 0.5, std::log(0.5)});
    const Eigen::VectorXd beta = Eigen::Vector2d(1.0, 2.0);
    EXPECT_EQ(oracle::simulate(gp, beta, 11), oracle::simulate(gp, beta, 11));
    EXPECT_NE(oracle::simulate(gp, beta, 11), oracle::simulate(gp, beta, 12));
}

TEST(Simulate, CapEnforced) {
    auto gp = make_gp(50, 4, 1, HyperParams{});
    gp.cap = 40;
    EXPECT_THROW(oracle::simulate(gp, Eigen::VectorXd::Zero(1), 1), DataError);
    EXPECT_THROW(oracle::dense_evidence(gp, Eigen::VectorXd::Zero(50), PriorSpec{}), DataError);
}

TEST(Evidence, ScalarGaussian) {
    DenseGP gp;
    gp.points = {make_point(73.3, 18.7, 0)};
    gp.X = Eigen::MatrixXd::Constant(1, 1, 0.7);
    gp.psi = HyperParams{std::log(1.3), 0.0, 0.0, std::log(0.4)};
    PriorSpec priors;
    const double s2 = 1.69 * (1.0 + 1e-5) + 100.0 * 0.49 + 0.16;
    const double y = 2.5;
    const double expected = -0.5 * y * y / s2 - 0.5 * std::log(2.0 * std::numbers::pi * s2);
    EXPECT_NEAR(oracle::dense_evidence(gp, Eigen::VectorXd::Constant(1, y), priors), expected, 1e-12);
}

TEST(Evidence, PermutationInvariant) {
    auto gp = make_gp(60, 5, 2, HyperParams{0.3, 1.2, 0.4, std::log(0.5)});
    const Eigen::VectorXd y = oracle::simulate(gp, Eigen::Vector2d(1.0, -1.0), 3);
    PriorSpec priors;
    const double a = oracle::dense_evidence(gp, y, priors);

    std::vector<int> order(60);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(8);
    std::shuffle(order.begin(), order.end(), rng);
    DenseGP perm = gp;
    Eigen::VectorXd yp(60);
    for (int i = 0; i < 60; ++i) {
        perm.points[i] = gp.points[order[i]];
        perm.X.row(i) = gp.X.row(order[i]);
        yp[i] = y[order[i]];
    }
    EXPECT_NEAR(oracle::dense_evidence(perm, yp, priors), a, 1e-9);
}

TEST(Evidence, ScanAroundTruthIsUnimodal) {
    auto gp = make_gp(150, 6, 1, HyperParams{std::log(2.0), std::log(5.66), std::log(3.601), std::log(0.5)});
    const Eigen::VectorXd y = oracle::simulate(gp, Eigen::VectorXd::Constant(1, 1.0), 4);
    PriorSpec priors;
    std::vector<double> vals;
    for (double d = -1.5; d <= 1.5001; d += 0.25) {
        DenseGP g = gp;
        g.psi.log_rho += d;
        vals.push_back(oracle::dense_evidence(g, y, priors));
        EXPECT_TRUE(std::isfinite(vals.back()));
    }
    const auto best = static_cast<std::size_t>(std::max_element(vals.begin(), vals.end()) - vals.begin());
    for (std::size_t i = 1; i <= best; ++i) EXPECT_GT(vals[i], vals[i - 1]);
    for (std::size_t i = best + 1; i < vals.size(); ++i) EXPECT_LT(vals[i], vals[i - 1]);
}

TEST(DensePredict, InterpolatesWithoutNoise) {
    auto gp = make_gp(40, 7, 1, HyperParams{0.0, std::log(3.0), 0.0, std::log(1e-4)});
    const Eigen::VectorXd y = oracle::simulate(gp, Eigen::VectorXd::Constant(1, 2.0), 9);
    const std::vector<SpatioTemporalPoint> pred{gp.points[5], gp.points[17]};
    Eigen::MatrixXd Xp(2, 1);
    Xp << gp.X(5, 0), gp.X(17, 0);
    const auto out = oracle::dense_predict(gp, y, pred, Xp, PriorSpec{});
    EXPECT_NEAR(out.mean[0], y[5], 1e-3);
    EXPECT_NEAR(out.mean[1], y[17], 1e-3);
}

TEST(DensePredict, FarFromDataReturnsPrior) {
    auto gp = make_gp(30, 8, 0, HyperParams{0.4, std::log(2.0), std::log(1.0), std::log(0.5)});
    const Eigen::VectorXd y = oracle::simulate(gp, Eigen::VectorXd(), 9);
    const std::vector<SpatioTemporalPoint> pred{make_point(10.0, -40.0, 400)};
    const auto out = oracle::dense_predict(gp, y, pred, Eigen::MatrixXd(1, 0), PriorSpec{});
    EXPECT_NEAR(out.mean[0], 0.0, 1e-12);
    EXPECT_NEAR(out.var[0], std::exp(0.8) * (1.0 + 1e-5) + 0.25, 1e-12);
}

TEST(DensePredict, VarianceBetweenNoiseAndPrior) {
    const HyperParams psi{0.2, std::log(4.0), std::log(2.0), std::log(0.5)};
    auto gp = make_gp(80, 9, 2, psi);
    const Eigen::VectorXd y = oracle::simulate(gp, Eigen::Vector2d(1.0, 0.3), 10);
    const auto pred = testing_support::random_points(50, 99);
    const Eigen::MatrixXd Xp = testing_support::random_covariates(50, 2, 98);
    PriorSpec priors;
    const auto out = oracle::dense_predict(gp, y, pred, Xp, priors);
    for (Eigen::Index k = 0; k < 50; ++k) {
        const double prior = cov_st(pred[k], pred[k], psi) + 100.0 * Xp.row(k).squaredNorm() + 0.25;
        EXPECT_GT(out.var[k], 0.25);
        EXPECT_LE(out.var[k], prior);
    }
}

TEST(DensePredict, CovariateMismatchRejected) {
    auto gp = make_gp(10, 1, 2, HyperParams{});
    const auto pred = testing_support::random_points(3, 2);
    EXPECT_THROW(oracle::dense_predict(gp, Eigen::VectorXd::Zero(10), pred, Eigen::MatrixXd::Zero(3, 1), PriorSpec{}),
                 DataError);
}
