#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "geo.hpp"

namespace ismra {

/// Relative nugget added to the variance when two coordinates coincide exactly.
inline constexpr double kNugget = 1e-5;

/// Log-scale covariance hyperparameters.
struct HyperParams {
    double log_sigma = 0.0;  ///< GRF standard deviation
    double log_rho = 0.0;    ///< spatial range, km
    double log_phi = 0.0;    ///< temporal range, days
    double log_zeta = 0.0;   ///< measurement-error standard deviation

    double sigma() const { return std::exp(log_sigma); }
    double rho() const { return std::exp(log_rho); }
    double phi() const { return std::exp(log_phi); }
    double zeta() const { return std::exp(log_zeta); }

    std::array<double, 4> as_array() const { return {log_sigma, log_rho, log_phi, log_zeta}; }
    static HyperParams from_array(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }

    bool finite() const {
        return std::isfinite(log_sigma) && std::isfinite(log_rho) && std::isfinite(log_phi) &&
               std::isfinite(log_zeta);
    }

    friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

inline constexpr std::array<const char*, 4> kHyperNames = {"log_sigma", "log_rho", "log_phi", "log_zeta"};

struct PriorSpec {
    double beta_prior_var = 100.0;
    std::array<double, 4> hyper_prior_mean{0.0, 0.0, 0.0, 0.0};
    std::array<double, 4> hyper_prior_sd{2.0, 2.0, 2.0, 2.0};
    std::optional<double> fixed_log_zeta = std::log(0.5);

    void validate() const {
        if (!(beta_prior_var > 0.0) || !std::isfinite(beta_prior_var)) {
            throw std::invalid_argument("beta_prior_var must be positive");
        }
        for (double sd : hyper_prior_sd) {
            if (!(sd > 0.0) || !std::isfinite(sd)) throw std::invalid_argument("hyperprior sd must be positive");
        }
        if (fixed_log_zeta && !std::isfinite(*fixed_log_zeta)) {
            throw std::invalid_argument("fixed_log_zeta must be finite");
        }
    }

    /// Number of hyperparameters that are estimated (3 when log zeta is fixed).
    std::size_t free_dim() const { return fixed_log_zeta ? 3 : 4; }
};

/// Matérn correlation with smoothness 1.5.
inline double matern15(double dist_km, double rho_km) {
    if (!(rho_km > 0.0)) throw std::invalid_argument("matern15: rho must be positive");
    const double r = std::sqrt(3.0) * dist_km / rho_km;
    return (1.0 + r) * std::exp(-r);
}

inline double temporal_corr(double gap_days, double phi_days) {
    if (!(phi_days > 0.0)) throw std::invalid_argument("temporal_corr: phi must be positive");
    return std::exp(-gap_days / phi_days);
}

/// sigma^2 Matérn(d; rho, 1.5) exp(-|dt| / phi), with the nugget on exact coincidence.
inline double cov_st(const SpatioTemporalPoint& a, const SpatioTemporalPoint& b, const HyperParams& psi) {
    const double var = std::exp(2.0 * psi.log_sigma);
    if (a == b) return var * (1.0 + kNugget);
    return var * matern15(haversine_km(a, b), psi.rho()) * temporal_corr(temporal_gap(a, b), psi.phi());
}

/// Type-erased covariance kernel, nugget excluded, so that other (e.g.
/// non-separable) kernels can be plugged in. The nugget is added by `cov_matrix`.
using CovarianceFunction =
    std::function<double(const SpatioTemporalPoint&, const SpatioTemporalPoint&, const HyperParams&)>;

inline const CovarianceFunction& separable_matern_exponential() {
    static const CovarianceFunction fn = [](const SpatioTemporalPoint& a, const SpatioTemporalPoint& b,
                                            const HyperParams& psi) {
        return std::exp(2.0 * psi.log_sigma) * matern15(haversine_km(a, b), psi.rho()) *
               temporal_corr(temporal_gap(a, b), psi.phi());
    };
    return fn;
}

/// Marginal variance at `p` including the nugget.
inline double point_variance(const SpatioTemporalPoint& p, const HyperParams& psi,
                             const CovarianceFunction& cov = separable_matern_exponential()) {
    return cov(p, p, psi) * (1.0 + kNugget);
}

/// Cross-covariance; the nugget is added wherever a row and a column coincide exactly.
inline Eigen::MatrixXd cov_matrix(std::span<const SpatioTemporalPoint> rows,
                                  std::span<const SpatioTemporalPoint> cols, const HyperParams& psi,
                                  const CovarianceFunction& cov = separable_matern_exponential()) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        for (Eigen::Index i = 0; i < out.rows(); ++i) {
            out(i, j) = rows[i] == cols[j] ? point_variance(rows[i], psi, cov) : cov(rows[i], cols[j], psi);
        }
    }
    return out;
}

/// Covariance of one point set with itself. The nugget sits on the diagonal
/// only, so repeated coordinates still give a positive definite matrix.
inline Eigen::MatrixXd cov_matrix(std::span<const SpatioTemporalPoint> pts, const HyperParams& psi,
                                  const CovarianceFunction& cov = separable_matern_exponential()) {
    const auto n = static_cast<Eigen::Index>(pts.size());
    Eigen::MatrixXd out(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        out(j, j) = point_variance(pts[j], psi, cov);
        for (Eigen::Index i = j + 1; i < n; ++i) {
            out(i, j) = cov(pts[i], pts[j], psi);
            out(j, i) = out(i, j);
        }
    }
    return out;
}

inline double normal_logpdf(double x, double mean, double sd) {
    const double z = (x - mean) / sd;
    return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

/// Independent normal hyperpriors on the free log-hyperparameters.
inline double log_hyper_prior(const HyperParams& psi, const PriorSpec& spec) {
    const auto x = psi.as_array();
    const std::size_t dim = spec.free_dim();
    double out = 0.0;
    for (std::size_t i = 0; i < dim; ++i) out += normal_logpdf(x[i], spec.hyper_prior_mean[i], spec.hyper_prior_sd[i]);
    return out;
}

/// Free coordinates (log sigma, log rho, log phi[, log zeta]) as a flat vector.
inline std::vector<double> free_coordinates(const HyperParams& psi, const PriorSpec& spec) {
    const auto x = psi.as_array();
    return {x.begin(), x.begin() + static_cast<std::ptrdiff_t>(spec.free_dim())};
}

inline HyperParams from_free_coordinates(std::span<const double> x, const PriorSpec& spec) {
    if (x.size() != spec.free_dim()) throw std::invalid_argument("hyperparameter vector has wrong dimension");
    HyperParams psi{x[0], x[1], x[2], spec.fixed_log_zeta ? *spec.fixed_log_zeta : x[3]};
    return psi;
}

}  // namespace ismra
