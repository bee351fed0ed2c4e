#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "ismra/covariance.hpp"
#include "ismra/geo.hpp"
#include "ismra/partition.hpp"

namespace testing_support {

using ismra::HyperParams;
using ismra::SpatioTemporalPoint;

/// Distinct random points in a 0.2 x 0.2 degree box over `days` days.
inline std::vector<SpatioTemporalPoint> random_points(std::size_t n, std::uint64_t seed, int days = 3,
                                                      double lon0 = 73.2, double lat0 = 18.6, double width = 0.2) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, width);
    std::uniform_int_distribution<int> t(0, days - 1);
    std::vector<SpatioTemporalPoint> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back({lon0 + u(rng), lat0 + u(rng), t(rng)});
    return out;
}

/// Hyperparameters drawn uniformly within +-2 prior SDs of the default hyperprior.
inline HyperParams random_psi(std::mt19937_64& rng, double half_width = 4.0) {
    std::uniform_real_distribution<double> u(-half_width, half_width);
    HyperParams psi;
    psi.log_sigma = u(rng);
    psi.log_rho = u(rng);
    psi.log_phi = u(rng);
    psi.log_zeta = u(rng);
    return psi;
}

/// Single-region tree whose knots are every distinct observation location.
inline std::shared_ptr<const ismra::RegionTree> full_knot_tree(const std::vector<SpatioTemporalPoint>& pts) {
    ismra::PartitionConfig cfg;
    cfg.n_lon_splits = 0;
    cfg.n_lat_splits = 0;
    cfg.n_time_splits = 0;
    auto tree = ismra::build_tree(pts, cfg);
    ismra::place_knots(tree, {}, cfg, 1);
    return std::make_shared<const ismra::RegionTree>(std::move(tree));
}

inline Eigen::MatrixXd random_covariates(std::size_t n, int p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    Eigen::MatrixXd X(static_cast<Eigen::Index>(n), p);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        for (Eigen::Index j = 0; j < X.cols(); ++j) X(i, j) = j == 0 ? 1.0 : z(rng);
    }
    return X;
}

inline double rel_frobenius(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return (a - b).norm() / b.norm();
}

}  // namespace testing_support
