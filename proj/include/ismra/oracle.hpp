#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "covariance.hpp"
#include "error.hpp"

namespace ismra::oracle {

/// Exact dense Gaussian-process model for small instances: y = X beta + W + eps,
/// W ~ GP(0, cov), eps ~ N(0, zeta^2 I), beta ~ N(0, beta_prior_var I).
struct DenseGP {
    std::vector<SpatioTemporalPoint> points;
    Eigen::MatrixXd X;
    HyperParams psi;
    CovarianceFunction cov = separable_matern_exponential();
    std::size_t cap = 2000;

    std::size_t n() const { return points.size(); }

    void check() const {
        if (points.size() > cap) {
            throw DataError("dense oracle: " + std::to_string(points.size()) + " points exceed the cap of " +
                            std::to_string(cap));
        }
        if (X.rows() != static_cast<Eigen::Index>(points.size())) throw DataError("dense oracle: covariate rows mismatch");
    }

    Eigen::MatrixXd sigma_W() const { return cov_matrix(points, psi, cov); }

    /// Marginal covariance of y with beta integrated out.
    Eigen::MatrixXd marginal_cov(double beta_prior_var) const {
        Eigen::MatrixXd K = sigma_W();
        K.noalias() += beta_prior_var * X * X.transpose();
        K.diagonal().array() += std::exp(2.0 * psi.log_zeta);
        return K;
    }
};

/// y = X beta + chol(Sigma_W) z + zeta e; z drawn before e.
inline Eigen::VectorXd simulate(const DenseGP& gp, const Eigen::VectorXd& beta, std::uint64_t seed) {
    gp.check();
    const auto n = static_cast<Eigen::Index>(gp.n());
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd z(n), e(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
    for (Eigen::Index i = 0; i < n; ++i) e[i] = normal(rng);

    Eigen::VectorXd y = gp.X.cols() > 0 ? Eigen::VectorXd(gp.X * beta) : Eigen::VectorXd::Zero(n);
    if (std::exp(2.0 * gp.psi.log_sigma) > 0.0) {
        Eigen::LLT<Eigen::MatrixXd> llt(gp.sigma_W());
        if (llt.info() != Eigen::Success) throw NumericError("dense oracle: covariance is not positive definite");
        y += llt.matrixL() * z;
    }
    y += gp.psi.zeta() * e;
    return y;
}

/// log N(y; 0, X Sigma_beta X^T + Sigma_W + zeta^2 I).
inline double dense_evidence(const DenseGP& gp, const Eigen::VectorXd& y, const PriorSpec& priors) {
    gp.check();
    const Eigen::LLT<Eigen::MatrixXd> llt(gp.marginal_cov(priors.beta_prior_var));
    if (llt.info() != Eigen::Success) throw NumericError("dense oracle: marginal covariance is not positive definite");
    const Eigen::VectorXd a = llt.matrixL().solve(y);
    const double logdet = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    return -0.5 * a.squaredNorm() - 0.5 * logdet - 0.5 * static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi);
}

struct DensePrediction {
    Eigen::VectorXd mean;
    Eigen::VectorXd var;  ///< predictive variance of a new noisy response
};

/// Gaussian conditional moments of Y^P given y, beta marginalized under its prior.
inline DensePrediction dense_predict(const DenseGP& gp, const Eigen::VectorXd& y,
                                     std::span<const SpatioTemporalPoint> pred, const Eigen::MatrixXd& X_pred,
                                     const PriorSpec& priors) {
    gp.check();
    if (pred.size() > gp.cap) throw DataError("dense oracle: prediction set exceeds the cap");
    if (X_pred.rows() != static_cast<Eigen::Index>(pred.size()) || X_pred.cols() != gp.X.cols()) {
        throw DataError("dense oracle: prediction covariates mismatch");
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(gp.marginal_cov(priors.beta_prior_var));
    if (llt.info() != Eigen::Success) throw NumericError("dense oracle: marginal covariance is not positive definite");

    Eigen::MatrixXd Kpy = cov_matrix(pred, gp.points, gp.psi, gp.cov);
    Kpy.noalias() += priors.beta_prior_var * X_pred * gp.X.transpose();
    DensePrediction out;
    out.mean = Kpy * llt.solve(y);
    const Eigen::MatrixXd A = llt.matrixL().solve(Kpy.transpose());
    const double z2 = std::exp(2.0 * gp.psi.log_zeta);
    out.var.resize(static_cast<Eigen::Index>(pred.size()));
    for (Eigen::Index k = 0; k < out.var.size(); ++k) {
        const double prior = point_variance(pred[k], gp.psi, gp.cov) + priors.beta_prior_var * X_pred.row(k).squaredNorm() + z2;
        out.var[k] = prior - A.col(k).squaredNorm();
    }
    return out;
}

}  // namespace ismra::oracle
