#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "covariance.hpp"
#include "error.hpp"
#include "parallel.hpp"
#include "partition.hpp"
#include "sparse.hpp"

namespace ismra {

/// Per-region state of the multi-resolution prior at one hyperparameter value.
///
/// For region r at resolution j with ancestors a_0..a_{j-1}:
///   V_r      = Var(Delta_r), the knot-knot covariance of delta_j conditional on
///              all ancestral knot sets (nugget included);
///   chol_r   = lower Cholesky factor of V_r;
///   cross_r[i] = chol_{a_i}^{-1} Cov(delta_i(Q_{a_i}), delta_i(Q_r)).
/// With these, delta_j covariances at any point of the region follow from
/// C_j(x, q) = C(x, q) - sum_i w_i(x)^T cross_r[i], w_i(x) = chol_{a_i}^{-1} C_i(Q_{a_i}, x).
struct RegionWorkspace {
    Eigen::MatrixXd V;
    Eigen::MatrixXd chol;
    std::vector<Eigen::MatrixXd> cross;
    double logdet_V = 0.0;
};

struct BasisSystem {
    std::shared_ptr<const RegionTree> tree;
    HyperParams psi;
    CovarianceFunction cov = separable_matern_exponential();
    std::vector<Index> col_offset;  ///< first knot column of each region
    Index n_knots = 0;
    std::vector<RegionWorkspace> work;
};

/// Block-diagonal prior of the basis coefficients eta. Block r has covariance
/// Gamma_r = V_r^{-1}; only V_r (its precision) and chol(V_r) are stored.
struct GammaBlocks {
    std::vector<Eigen::MatrixXd> precision;
    std::vector<Eigen::MatrixXd> precision_chol;
    double logdet_gamma = 0.0;  ///< sum of log det Gamma_r = -sum log det V_r

    Eigen::MatrixXd covariance(std::size_t r) const {
        const auto m = precision[r].rows();
        Eigen::MatrixXd id = Eigen::MatrixXd::Identity(m, m);
        return precision[r].llt().solve(id);
    }
};

struct BasisAndGamma {
    GammaBlocks gamma;
    BasisSystem basis;
};

namespace detail {

inline std::vector<Index> column_offsets(const RegionTree& tree, Index& total) {
    std::vector<Index> off(tree.regions.size());
    total = 0;
    for (std::size_t r = 0; r < tree.regions.size(); ++r) {
        off[r] = total;
        total += static_cast<Index>(tree.regions[r].knots.size());
    }
    return off;
}

/// B_j(X) = C_j(X, Q_{path[j]}) for every level j of `path`.
///
/// When `residual` is given it receives, per point, the variance of the
/// process left after conditioning on every knot set along the path.
inline std::vector<Eigen::MatrixXd> path_blocks(const BasisSystem& sys, std::span<const int> path,
                                                std::span<const SpatioTemporalPoint> pts,
                                                Eigen::VectorXd* residual = nullptr) {
    const RegionTree& tree = *sys.tree;
    std::vector<Eigen::MatrixXd> blocks(path.size());
    std::vector<Eigen::MatrixXd> whitened(path.size());
    if (residual) {
        residual->resize(static_cast<Eigen::Index>(pts.size()));
        for (std::size_t t = 0; t < pts.size(); ++t) (*residual)[static_cast<Eigen::Index>(t)] = point_variance(pts[t], sys.psi, sys.cov);
    }
    for (std::size_t j = 0; j < path.size(); ++j) {
        const int r = path[j];
        const auto& knots = tree.regions[r].knots;
        Eigen::MatrixXd b = cov_matrix(pts, knots, sys.psi, sys.cov);
        for (std::size_t i = 0; i < j; ++i) {
            if (whitened[i].rows() > 0 && b.cols() > 0) b.noalias() -= whitened[i].transpose() * sys.work[r].cross[i];
        }
        if (j + 1 < path.size() || residual) {
            const auto& L = sys.work[r].chol;
            whitened[j] = b.transpose();
            if (L.rows() > 0) L.triangularView<Eigen::Lower>().solveInPlace(whitened[j]);
            if (residual && whitened[j].rows() > 0) *residual -= whitened[j].colwise().squaredNorm().transpose();
        }
        blocks[j] = std::move(b);
    }
    if (residual) *residual = residual->cwiseMax(0.0);
    return blocks;
}

}  // namespace detail

/// Conditional (Schur-complement) covariances for every region, coarse to fine.
inline BasisAndGamma build_gamma_and_bases(std::shared_ptr<const RegionTree> tree, const HyperParams& psi,
                                           const CovarianceFunction& cov = separable_matern_exponential()) {
    BasisAndGamma out;
    BasisSystem& sys = out.basis;
    sys.tree = tree;
    sys.psi = psi;
    sys.cov = cov;
    sys.col_offset = detail::column_offsets(*tree, sys.n_knots);
    sys.work.resize(tree->regions.size());

    for (const auto& level : tree->levels) {
        parallel_for(static_cast<std::ptrdiff_t>(level.size()), [&](std::ptrdiff_t li) {
            const int r = level[static_cast<std::size_t>(li)];
            const Region& reg = tree->regions[r];
            RegionWorkspace& w = sys.work[r];
            const auto path = tree->path_to(r);
            const std::span<const int> ancestors(path.data(), path.size() - 1);
            const auto& knots = reg.knots;
            const auto m = static_cast<Eigen::Index>(knots.size());

            w.cross.resize(ancestors.size());
            Eigen::MatrixXd V = cov_matrix(knots, psi, cov);
            if (!ancestors.empty() && m > 0) {
                const auto b = detail::path_blocks(sys, ancestors, knots);
                for (std::size_t i = 0; i < ancestors.size(); ++i) {
                    Eigen::MatrixXd c = b[i].transpose();
                    const auto& L = sys.work[ancestors[i]].chol;
                    if (L.rows() > 0) L.triangularView<Eigen::Lower>().solveInPlace(c);
                    V.noalias() -= c.transpose() * c;
                    w.cross[i] = std::move(c);
                }
            } else {
                for (std::size_t i = 0; i < ancestors.size(); ++i) {
                    w.cross[i].resize(tree->regions[ancestors[i]].knots.size(), m);
                }
            }
            V = 0.5 * (V + V.transpose()).eval();
            if (m > 0) {
                Eigen::LLT<Eigen::MatrixXd> llt(V);
                if (llt.info() != Eigen::Success) {
                    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(V, Eigen::EigenvaluesOnly).eigenvalues();
                    throw NumericError("singular knot block in region " + reg.path + " (eigenvalue range " +
                                       std::to_string(ev.minCoeff()) + " .. " + std::to_string(ev.maxCoeff()) + ")");
                }
                w.chol = llt.matrixL();
                w.logdet_V = 2.0 * w.chol.diagonal().array().log().sum();
            }
            w.V = std::move(V);
        });
    }

    GammaBlocks& g = out.gamma;
    g.precision.reserve(sys.work.size());
    for (const auto& w : sys.work) {
        g.precision.push_back(w.V);
        g.precision_chol.push_back(w.chol);
        g.logdet_gamma -= w.logdet_V;
    }
    return out;
}

/// A sparse row: knot-column indices (relative to the start of F) and values.
struct SparseRow {
    std::vector<Index> idx;
    std::vector<double> val;
    /// Variance of the finest-resolution residual at the point, i.e. the part of
    /// Var(W(s)) the basis does not carry (zero at finest-level knots).
    double residual_var = 0.0;
};

/// Basis rows for a batch of points; points sharing a leaf are evaluated together.
inline std::vector<SparseRow> evaluate_basis_rows(const BasisSystem& sys, std::span<const SpatioTemporalPoint> pts) {
    const RegionTree& tree = *sys.tree;
    std::map<int, std::vector<std::size_t>> by_leaf;
    std::vector<std::vector<int>> paths(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        paths[i] = tree.locate(pts[i]);
        by_leaf[paths[i].back()].push_back(i);
    }
    std::vector<SparseRow> rows(pts.size());
    std::vector<std::pair<int, std::vector<std::size_t>>> groups(by_leaf.begin(), by_leaf.end());
    parallel_for(static_cast<std::ptrdiff_t>(groups.size()), [&](std::ptrdiff_t g) {
        const auto& members = groups[static_cast<std::size_t>(g)].second;
        const auto& path = paths[members.front()];
        std::vector<SpatioTemporalPoint> sub;
        sub.reserve(members.size());
        for (std::size_t i : members) sub.push_back(pts[i]);
        Eigen::VectorXd resid;
        const auto blocks = detail::path_blocks(sys, path, sub, &resid);
        for (std::size_t t = 0; t < members.size(); ++t) {
            SparseRow& row = rows[members[t]];
            row.residual_var = resid[static_cast<Eigen::Index>(t)];
            for (std::size_t j = 0; j < path.size(); ++j) {
                const Index off = sys.col_offset[path[j]];
                for (Eigen::Index c = 0; c < blocks[j].cols(); ++c) {
                    row.idx.push_back(off + c);
                    row.val.push_back(blocks[j](static_cast<Eigen::Index>(t), c));
                }
            }
        }
    });
    return rows;
}

inline SparseRow evaluate_basis_row(const BasisSystem& sys, const SpatioTemporalPoint& point) {
    return evaluate_basis_rows(sys, std::span<const SpatioTemporalPoint>(&point, 1)).front();
}

/// H = [X F] as a compressed-column matrix. The pattern depends only on the
/// tree and the points, never on the hyperparameters.
inline SparseMatrix assemble_H(const BasisSystem& sys, const Eigen::MatrixXd& X,
                               std::span<const SpatioTemporalPoint> points) {
    if (X.rows() != static_cast<Eigen::Index>(points.size())) {
        throw DataError("assemble_H: covariate rows do not match the number of points");
    }
    const Index n = X.rows();
    const Index p = X.cols();
    const auto rows = evaluate_basis_rows(sys, points);
    SparseMatrix H;
    H.n_rows = n;
    H.n_cols = p + sys.n_knots;
    std::vector<Index> count(static_cast<std::size_t>(H.n_cols), 0);
    for (Index c = 0; c < p; ++c) count[c] = n;
    for (const auto& r : rows) {
        for (Index c : r.idx) ++count[p + c];
    }
    H.col_ptr.assign(H.n_cols + 1, 0);
    for (Index c = 0; c < H.n_cols; ++c) H.col_ptr[c + 1] = H.col_ptr[c] + count[c];
    H.row_idx.resize(H.col_ptr.back());
    H.values.resize(H.col_ptr.back());
    std::vector<Index> next(H.col_ptr.begin(), H.col_ptr.end() - 1);
    for (Index i = 0; i < n; ++i) {
        for (Index c = 0; c < p; ++c) {
            H.row_idx[next[c]] = i;
            H.values[next[c]++] = X(i, c);
        }
        const auto& r = rows[static_cast<std::size_t>(i)];
        for (std::size_t t = 0; t < r.idx.size(); ++t) {
            const Index c = p + r.idx[t];
            H.row_idx[next[c]] = i;
            H.values[next[c]++] = r.val[t];
        }
    }
    return H;
}

struct FullConditional {
    HyperParams psi;
    SparseSymMatrix Q;
    Eigen::VectorXd xi;
    Eigen::VectorXd mean;
    std::shared_ptr<const NumericFactor> factor;
    double logdet_Q = 0.0;
    double logdet_gamma = 0.0;       ///< sum over blocks of log det Gamma_r
    double logdet_sigma_beta = 0.0;  ///< log det of the fixed-effect prior covariance
    Index n_fixed = 0;               ///< leading columns belonging to beta
};

namespace detail {

/// Prior precision blockdiag(Sigma_beta^{-1}, Gamma^{-1}) added into an existing Q pattern.
inline void add_prior_precision(SparseSymMatrix& Q, const GammaBlocks& gam, Index p, double beta_var) {
    for (Index c = 0; c < p; ++c) Q.values[Q.find(c, c)] += 1.0 / beta_var;
    Index base = p;
    for (std::size_t r = 0; r < gam.precision.size(); ++r) {
        const auto& V = gam.precision[r];
        for (Eigen::Index b = 0; b < V.cols(); ++b) {
            for (Eigen::Index a = b; a < V.rows(); ++a) {
                const Index pos = Q.find(base + a, base + b);
                if (pos < 0) throw NumericError("prior block entry missing from the precision pattern");
                Q.values[pos] += V(a, b);
            }
        }
        base += V.rows();
    }
}

}  // namespace detail

/// Q = blockdiag(Sigma_beta, Gamma)^{-1} + H^T H / zeta^2 and xi = H^T y / zeta^2,
/// factorized (reusing `sym` when supplied) with mean Q^{-1} xi.
///
/// This is the general route working from an explicit H; `MraModel` produces
/// the same Q leaf by leaf for repeated evaluation.
inline FullConditional build_full_conditional(const SparseMatrix& H, const GammaBlocks& gam, const Eigen::VectorXd& y,
                                              const HyperParams& psi, const PriorSpec& priors,
                                              std::shared_ptr<const SymbolicFactor> sym = nullptr) {
    Index n_knots = 0;
    for (const auto& V : gam.precision) n_knots += V.rows();
    const Index p = H.n_cols - n_knots;
    if (p < 0 || H.n_rows != y.size()) throw DataError("build_full_conditional: dimension mismatch");
    const double inv_z2 = std::exp(-2.0 * psi.log_zeta);

    // row-wise supports of H
    std::vector<std::vector<std::pair<Index, double>>> rows(static_cast<std::size_t>(H.n_rows));
    for (Index c = 0; c < H.n_cols; ++c) {
        for (Index q = H.col_ptr[c]; q < H.col_ptr[c + 1]; ++q) rows[H.row_idx[q]].emplace_back(c, H.values[q]);
    }
    // pattern: diagonal, prior blocks, and one clique per row support
    std::vector<std::vector<Index>> pat(static_cast<std::size_t>(H.n_cols));
    for (Index c = 0; c < H.n_cols; ++c) pat[c].push_back(c);
    for (Index base = p; const auto& V : gam.precision) {
        const Index m = V.rows();
        for (Index b = 0; b < m; ++b) {
            for (Index a = b; a < m; ++a) pat[base + b].push_back(base + a);
        }
        base += m;
    }
    for (const auto& row : rows) {
        for (std::size_t b = 0; b < row.size(); ++b) {
            for (std::size_t a = b; a < row.size(); ++a) pat[row[b].first].push_back(row[a].first);
        }
    }
    SparseSymMatrix Q;
    Q.n = H.n_cols;
    for (Index c = 0; c < Q.n; ++c) {
        auto& v = pat[c];
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
        Q.row_idx.insert(Q.row_idx.end(), v.begin(), v.end());
        Q.col_ptr.push_back(static_cast<Index>(Q.row_idx.size()));
    }
    Q.values.assign(Q.row_idx.size(), 0.0);

    Eigen::VectorXd xi = Eigen::VectorXd::Zero(Q.n);
    for (Index i = 0; i < H.n_rows; ++i) {
        const auto& row = rows[i];
        for (std::size_t b = 0; b < row.size(); ++b) {
            xi[row[b].first] += row[b].second * y[i] * inv_z2;
            for (std::size_t a = b; a < row.size(); ++a) {
                Q.values[Q.find(row[a].first, row[b].first)] += row[a].second * row[b].second * inv_z2;
            }
        }
    }
    detail::add_prior_precision(Q, gam, p, priors.beta_prior_var);

    if (!sym) sym = std::make_shared<const SymbolicFactor>(analyze(Q));
    FullConditional fc;
    fc.psi = psi;
    fc.n_fixed = p;
    try {
        fc.factor = std::make_shared<const NumericFactor>(sym, Q);
    } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at psi = (" + std::to_string(psi.log_sigma) + ", " +
                           std::to_string(psi.log_rho) + ", " + std::to_string(psi.log_phi) + ", " +
                           std::to_string(psi.log_zeta) + ")");
    }
    fc.Q = std::move(Q);
    fc.xi = std::move(xi);
    fc.mean = fc.factor->solve(fc.xi);
    fc.logdet_Q = fc.factor->logdet();
    fc.logdet_gamma = gam.logdet_gamma;
    fc.logdet_sigma_beta = static_cast<double>(p) * std::log(priors.beta_prior_var);
    return fc;
}

/// Observations, covariates, and responses.
struct ModelData {
    std::vector<SpatioTemporalPoint> points;
    Eigen::MatrixXd X;  ///< n x p; may have zero columns
    Eigen::VectorXd y;

    void validate() const {
        const auto n = static_cast<Eigen::Index>(points.size());
        if (X.rows() != n || y.size() != n) throw DataError("model data: inconsistent row counts");
        if (!X.allFinite() || !y.allFinite()) throw DataError("model data: non-finite values");
    }
};

/// Everything that does not depend on the hyperparameters: the tree, the data,
/// the leaf-blocked layout of H, the pattern of Q, and its symbolic analysis.
class MraModel {
public:
    struct Evaluation {
        BasisAndGamma prior;
        FullConditional fc;
        /// Leaf-blocked H: for leaf l, a dense (obs in leaf) x (support) block.
        std::vector<Eigen::MatrixXd> H_blocks;
    };

    MraModel(std::shared_ptr<const RegionTree> tree, ModelData data, PriorSpec priors,
             CovarianceFunction cov = separable_matern_exponential())
        : tree_(std::move(tree)), data_(std::move(data)), priors_(std::move(priors)), cov_(std::move(cov)) {
        data_.validate();
        priors_.validate();
        if (tree_->obs.size() != data_.points.size()) throw DataError("model: tree and data sizes differ");
        build_layout();
    }

    const RegionTree& tree() const { return *tree_; }
    std::shared_ptr<const RegionTree> tree_ptr() const { return tree_; }
    const ModelData& data() const { return data_; }
    const PriorSpec& priors() const { return priors_; }
    const CovarianceFunction& covariance() const { return cov_; }
    Index n_fixed() const { return data_.X.cols(); }
    Index n_knots() const { return n_knots_; }
    Index dim() const { return n_fixed() + n_knots_; }
    const std::vector<Index>& col_offset() const { return col_offset_; }
    std::shared_ptr<const SymbolicFactor> symbolic() const { return sym_; }
    /// Pattern of Q (values zero); identical for every hyperparameter value.
    const SparseSymMatrix& q_pattern() const { return q_pattern_; }

    Evaluation evaluate(const HyperParams& psi) const {
        Evaluation ev;
        ev.prior = build_gamma_and_bases(tree_, psi, cov_);
        const BasisSystem& sys = ev.prior.basis;
        const Index p = n_fixed();
        const double inv_z2 = std::exp(-2.0 * psi.log_zeta);

        SparseSymMatrix Q = q_pattern_;
        Eigen::VectorXd xi = Eigen::VectorXd::Zero(dim());
        ev.H_blocks.resize(leaves_.size());
        std::vector<Eigen::MatrixXd> grams(leaves_.size());
        std::vector<Eigen::VectorXd> xis(leaves_.size());
        parallel_for(static_cast<std::ptrdiff_t>(leaves_.size()), [&](std::ptrdiff_t li) {
            const LeafLayout& leaf = leaves_[static_cast<std::size_t>(li)];
            Eigen::MatrixXd& F = ev.H_blocks[static_cast<std::size_t>(li)];
            F.resize(static_cast<Eigen::Index>(leaf.obs.size()), static_cast<Eigen::Index>(leaf.support.size()));
            std::vector<SpatioTemporalPoint> pts;
            pts.reserve(leaf.obs.size());
            Eigen::VectorXd yl(static_cast<Eigen::Index>(leaf.obs.size()));
            for (std::size_t t = 0; t < leaf.obs.size(); ++t) {
                pts.push_back(data_.points[leaf.obs[t]]);
                F.row(static_cast<Eigen::Index>(t)).head(p) = data_.X.row(static_cast<Eigen::Index>(leaf.obs[t]));
                yl[static_cast<Eigen::Index>(t)] = data_.y[static_cast<Eigen::Index>(leaf.obs[t])];
            }
            const auto blocks = detail::path_blocks(sys, leaf.path, pts);
            Eigen::Index col = p;
            for (const auto& b : blocks) {
                F.middleCols(col, b.cols()) = b;
                col += b.cols();
            }
            Eigen::MatrixXd G = Eigen::MatrixXd::Zero(F.cols(), F.cols());
            G.selfadjointView<Eigen::Lower>().rankUpdate(F.transpose(), inv_z2);
            grams[static_cast<std::size_t>(li)] = std::move(G);
            xis[static_cast<std::size_t>(li)] = F.transpose() * yl * inv_z2;
        });
        for (std::size_t li = 0; li < leaves_.size(); ++li) {
            const LeafLayout& leaf = leaves_[li];
            const auto& G = grams[li];
            const auto s = static_cast<Eigen::Index>(leaf.support.size());
            std::size_t k = 0;
            for (Eigen::Index b = 0; b < s; ++b) {
                for (Eigen::Index a = b; a < s; ++a) Q.values[leaf.q_pos[k++]] += G(a, b);
                xi[leaf.support[b]] += xis[li][b];
            }
        }
        detail::add_prior_precision(Q, ev.prior.gamma, p, priors_.beta_prior_var);

        FullConditional& fc = ev.fc;
        fc.psi = psi;
        fc.n_fixed = p;
        try {
            fc.factor = std::make_shared<const NumericFactor>(sym_, Q);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " at psi = (" + std::to_string(psi.log_sigma) + ", " +
                               std::to_string(psi.log_rho) + ", " + std::to_string(psi.log_phi) + ", " +
                               std::to_string(psi.log_zeta) + ")");
        }
        fc.Q = std::move(Q);
        fc.xi = std::move(xi);
        fc.mean = fc.factor->solve(fc.xi);
        fc.logdet_Q = fc.factor->logdet();
        fc.logdet_gamma = ev.prior.gamma.logdet_gamma;
        fc.logdet_sigma_beta = static_cast<double>(p) * std::log(priors_.beta_prior_var);
        return ev;
    }

    /// H as a compressed-column matrix from the leaf blocks of an evaluation.
    SparseMatrix H(const Evaluation& ev) const {
        SparseMatrix out = h_pattern_;
        for (std::size_t li = 0; li < leaves_.size(); ++li) {
            const auto& F = ev.H_blocks[li];
            const auto& pos = leaves_[li].h_pos;
            std::size_t k = 0;
            for (Eigen::Index t = 0; t < F.rows(); ++t) {
                for (Eigen::Index c = 0; c < F.cols(); ++c) out.values[pos[k++]] = F(t, c);
            }
        }
        return out;
    }

    /// Residual sum of squares ||y - H v||^2 from the leaf blocks.
    double residual_ss(const Evaluation& ev, const Eigen::VectorXd& v) const {
        double out = 0.0;
        for (std::size_t li = 0; li < leaves_.size(); ++li) {
            const LeafLayout& leaf = leaves_[li];
            Eigen::VectorXd vs(static_cast<Eigen::Index>(leaf.support.size()));
            for (std::size_t c = 0; c < leaf.support.size(); ++c) vs[static_cast<Eigen::Index>(c)] = v[leaf.support[c]];
            const Eigen::VectorXd fit = ev.H_blocks[li] * vs;
            for (std::size_t t = 0; t < leaf.obs.size(); ++t) {
                const double r = data_.y[static_cast<Eigen::Index>(leaf.obs[t])] - fit[static_cast<Eigen::Index>(t)];
                out += r * r;
            }
        }
        return out;
    }

private:
    struct LeafLayout {
        int region = -1;
        std::vector<int> path;
        std::vector<std::size_t> obs;
        std::vector<Index> support;  ///< Q columns touched by rows of this leaf, ascending
        std::vector<Index> q_pos;    ///< lower-triangle positions of support x support in Q
        std::vector<Index> h_pos;    ///< row-major positions of the dense block in H
    };

    void build_layout() {
        col_offset_ = detail::column_offsets(*tree_, n_knots_);
        const Index p = n_fixed();
        const Index N = dim();
        for (int r : tree_->leaves()) {
            LeafLayout leaf;
            leaf.region = r;
            leaf.path = tree_->path_to(r);
            leaf.obs = tree_->regions[r].obs_idx;
            for (Index c = 0; c < p; ++c) leaf.support.push_back(c);
            for (int a : leaf.path) {
                const auto m = static_cast<Index>(tree_->regions[a].knots.size());
                for (Index c = 0; c < m; ++c) leaf.support.push_back(p + col_offset_[a] + c);
            }
            leaves_.push_back(std::move(leaf));
        }

        std::vector<std::vector<Index>> pat(static_cast<std::size_t>(N));
        for (Index c = 0; c < N; ++c) pat[c].push_back(c);
        for (const auto& leaf : leaves_) {
            for (std::size_t b = 0; b < leaf.support.size(); ++b) {
                auto& col = pat[leaf.support[b]];
                col.insert(col.end(), leaf.support.begin() + static_cast<std::ptrdiff_t>(b), leaf.support.end());
            }
        }
        q_pattern_.n = N;
        for (Index c = 0; c < N; ++c) {
            auto& v = pat[c];
            std::sort(v.begin(), v.end());
            v.erase(std::unique(v.begin(), v.end()), v.end());
            q_pattern_.row_idx.insert(q_pattern_.row_idx.end(), v.begin(), v.end());
            q_pattern_.col_ptr.push_back(static_cast<Index>(q_pattern_.row_idx.size()));
            std::vector<Index>().swap(v);
        }
        q_pattern_.values.assign(q_pattern_.row_idx.size(), 0.0);
        for (auto& leaf : leaves_) {
            const auto s = leaf.support.size();
            leaf.q_pos.reserve(s * (s + 1) / 2);
            for (std::size_t b = 0; b < s; ++b) {
                for (std::size_t a = b; a < s; ++a) leaf.q_pos.push_back(q_pattern_.find(leaf.support[a], leaf.support[b]));
            }
        }

        // H pattern: every observation row touches exactly its leaf support
        const Index n = static_cast<Index>(data_.points.size());
        h_pattern_.n_rows = n;
        h_pattern_.n_cols = N;
        std::vector<std::vector<Index>> col_rows(static_cast<std::size_t>(N));
        for (const auto& leaf : leaves_) {
            for (Index c : leaf.support) {
                for (std::size_t i : leaf.obs) col_rows[c].push_back(static_cast<Index>(i));
            }
        }
        for (auto& rows : col_rows) std::sort(rows.begin(), rows.end());
        h_pattern_.col_ptr.assign(N + 1, 0);
        for (Index c = 0; c < N; ++c) {
            h_pattern_.col_ptr[c + 1] = h_pattern_.col_ptr[c] + static_cast<Index>(col_rows[c].size());
            h_pattern_.row_idx.insert(h_pattern_.row_idx.end(), col_rows[c].begin(), col_rows[c].end());
        }
        h_pattern_.values.assign(h_pattern_.row_idx.size(), 0.0);
        for (auto& leaf : leaves_) {
            for (std::size_t i : leaf.obs) {
                for (Index c : leaf.support) {
                    const auto first = h_pattern_.row_idx.begin() + h_pattern_.col_ptr[c];
                    const auto last = h_pattern_.row_idx.begin() + h_pattern_.col_ptr[c + 1];
                    leaf.h_pos.push_back(static_cast<Index>(std::lower_bound(first, last, static_cast<Index>(i)) -
                                                            h_pattern_.row_idx.begin()));
                }
            }
        }

        sym_ = std::make_shared<const SymbolicFactor>(analyze(q_pattern_));
    }

    std::shared_ptr<const RegionTree> tree_;
    ModelData data_;
    PriorSpec priors_;
    CovarianceFunction cov_;
    std::vector<Index> col_offset_;
    Index n_knots_ = 0;
    std::vector<LeafLayout> leaves_;
    SparseSymMatrix q_pattern_;
    SparseMatrix h_pattern_;
    std::shared_ptr<const SymbolicFactor> sym_;
};

}  // namespace ismra
