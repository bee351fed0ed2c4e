#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCore>

#include "error.hpp"

namespace ismra {

using Index = std::ptrdiff_t;

/// Compressed sparse column matrix; row indices strictly increasing per column.
struct SparseMatrix {
    Index n_rows = 0;
    Index n_cols = 0;
    std::vector<Index> col_ptr{0};
    std::vector<Index> row_idx;
    std::vector<double> values;

    Index nnz() const { return static_cast<Index>(row_idx.size()); }

    bool same_pattern(const SparseMatrix& o) const {
        return n_rows == o.n_rows && n_cols == o.n_cols && col_ptr == o.col_ptr && row_idx == o.row_idx;
    }

    void validate() const {
        if (static_cast<Index>(col_ptr.size()) != n_cols + 1 || col_ptr.front() != 0 ||
            col_ptr.back() != nnz() || values.size() != row_idx.size()) {
            throw NumericError("sparse matrix: inconsistent storage");
        }
        for (Index j = 0; j < n_cols; ++j) {
            if (col_ptr[j] > col_ptr[j + 1]) throw NumericError("sparse matrix: decreasing column offsets");
            for (Index p = col_ptr[j]; p < col_ptr[j + 1]; ++p) {
                if (row_idx[p] < 0 || row_idx[p] >= n_rows) throw NumericError("sparse matrix: row index out of range");
                if (p > col_ptr[j] && row_idx[p] <= row_idx[p - 1]) {
                    throw NumericError("sparse matrix: row indices not strictly increasing");
                }
            }
        }
    }

    Eigen::MatrixXd to_dense() const {
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_rows, n_cols);
        for (Index j = 0; j < n_cols; ++j) {
            for (Index p = col_ptr[j]; p < col_ptr[j + 1]; ++p) out(row_idx[p], j) = values[p];
        }
        return out;
    }
};

/// Symmetric matrix stored as its lower triangle in compressed columns; the
/// diagonal entry is the first entry of every column.
struct SparseSymMatrix {
    Index n = 0;
    std::vector<Index> col_ptr{0};
    std::vector<Index> row_idx;
    std::vector<double> values;

    Index nnz_lower() const { return static_cast<Index>(row_idx.size()); }
    /// Nonzeros of the full symmetric matrix.
    Index nnz_full() const { return 2 * nnz_lower() - n; }

    bool same_pattern(const SparseSymMatrix& o) const {
        return n == o.n && col_ptr == o.col_ptr && row_idx == o.row_idx;
    }

    /// Position of entry (i, j), i >= j, in `values`, or -1 when structurally zero.
    Index find(Index i, Index j) const {
        if (i < j) std::swap(i, j);
        const auto first = row_idx.begin() + col_ptr[j];
        const auto last = row_idx.begin() + col_ptr[j + 1];
        const auto it = std::lower_bound(first, last, i);
        return it != last && *it == i ? static_cast<Index>(it - row_idx.begin()) : -1;
    }

    Eigen::MatrixXd to_dense() const {
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
        for (Index j = 0; j < n; ++j) {
            for (Index p = col_ptr[j]; p < col_ptr[j + 1]; ++p) {
                out(row_idx[p], j) = values[p];
                out(j, row_idx[p]) = values[p];
            }
        }
        return out;
    }

    Eigen::VectorXd multiply(const Eigen::VectorXd& x) const {
        Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
        for (Index j = 0; j < n; ++j) {
            for (Index p = col_ptr[j]; p < col_ptr[j + 1]; ++p) {
                const Index i = row_idx[p];
                y[i] += values[p] * x[j];
                if (i != j) y[j] += values[p] * x[i];
            }
        }
        return y;
    }

    /// Lower triangle of a dense matrix, keeping entries with |a_ij| > drop_tol
    /// (diagonal always kept).
    static SparseSymMatrix from_dense(const Eigen::MatrixXd& a, double drop_tol = 0.0) {
        SparseSymMatrix out;
        out.n = a.rows();
        for (Index j = 0; j < out.n; ++j) {
            for (Index i = j; i < out.n; ++i) {
                if (i == j || std::abs(a(i, j)) > drop_tol) {
                    out.row_idx.push_back(i);
                    out.values.push_back(a(i, j));
                }
            }
            out.col_ptr.push_back(static_cast<Index>(out.row_idx.size()));
        }
        return out;
    }
};

/// Pattern-only analysis: fill-reducing ordering, elimination tree, and the
/// nonzero structure of the unit lower factor. Valid for every matrix with
/// the analysed pattern, whatever its values.
struct SymbolicFactor {
    Index n = 0;
    std::vector<Index> perm;          ///< new position -> original index
    std::vector<Index> pinv;          ///< original index -> new position
    std::vector<Index> parent;        ///< elimination tree of the permuted matrix
    std::vector<Index> col_counts;    ///< strictly-lower nonzeros per column of L
    std::vector<Index> L_col_ptr;
    std::vector<Index> L_row_idx;
    // permuted upper triangle, filled from the input lower triangle via `scatter`
    std::vector<Index> C_col_ptr;
    std::vector<Index> C_row_idx;
    std::vector<Index> scatter;
    // analysed pattern, kept to reject mismatched inputs
    std::vector<Index> A_col_ptr;
    std::vector<Index> A_row_idx;

    Index nnz_L() const { return static_cast<Index>(L_row_idx.size()); }
};

enum class Ordering { Amd, Natural };

namespace detail {

inline void check_pattern(const SparseSymMatrix& a) {
    if (static_cast<Index>(a.col_ptr.size()) != a.n + 1 || a.col_ptr.back() != a.nnz_lower()) {
        throw NumericError("symmetric pattern: inconsistent storage");
    }
    for (Index j = 0; j < a.n; ++j) {
        if (a.col_ptr[j] == a.col_ptr[j + 1] || a.row_idx[a.col_ptr[j]] != j) {
            throw NumericError("symmetric pattern: missing diagonal entry in column " + std::to_string(j));
        }
        for (Index p = a.col_ptr[j] + 1; p < a.col_ptr[j + 1]; ++p) {
            if (a.row_idx[p] <= a.row_idx[p - 1] || a.row_idx[p] >= a.n) {
                throw NumericError("symmetric pattern: bad row index in column " + std::to_string(j));
            }
        }
    }
}

}  // namespace detail

namespace detail {

inline std::vector<Index> amd_order(const SparseSymMatrix& pattern) {
    const Index n = pattern.n;
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    if (n > 0) {
        using EigenSparse = Eigen::SparseMatrix<double, Eigen::ColMajor, Index>;
        std::vector<Eigen::Triplet<double, Index>> trip;
        trip.reserve(2 * pattern.row_idx.size());
        for (Index j = 0; j < n; ++j) {
            for (Index p = pattern.col_ptr[j]; p < pattern.col_ptr[j + 1]; ++p) {
                trip.emplace_back(pattern.row_idx[p], j, 1.0);
                if (pattern.row_idx[p] != j) trip.emplace_back(j, pattern.row_idx[p], 1.0);
            }
        }
        EigenSparse full(n, n);
        full.setFromTriplets(trip.begin(), trip.end());
        Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, Index> amd;
        Eigen::AMDOrdering<Index> order;
        order(full, amd);
        for (Index k = 0; k < n; ++k) perm[k] = amd.indices()[k];
    }
    return perm;
}

}  // namespace detail

/// Symbolic analysis under an explicit ordering; perm[new] = original index.
inline SymbolicFactor analyze(const SparseSymMatrix& pattern, std::span<const Index> perm) {
    detail::check_pattern(pattern);
    const Index n = pattern.n;
    if (static_cast<Index>(perm.size()) != n) throw NumericError("analyze: permutation has wrong length");
    SymbolicFactor s;
    s.n = n;
    s.A_col_ptr = pattern.col_ptr;
    s.A_row_idx = pattern.row_idx;
    s.perm.assign(perm.begin(), perm.end());
    s.pinv.assign(static_cast<std::size_t>(n), -1);
    for (Index k = 0; k < n; ++k) {
        if (s.perm[k] < 0 || s.perm[k] >= n || s.pinv[s.perm[k]] != -1) throw NumericError("analyze: invalid permutation");
        s.pinv[s.perm[k]] = k;
    }

    // permuted upper triangle C = P A P^T
    std::vector<Index> count(n, 0);
    for (Index j = 0; j < n; ++j) {
        for (Index p = pattern.col_ptr[j]; p < pattern.col_ptr[j + 1]; ++p) {
            ++count[std::max(s.pinv[pattern.row_idx[p]], s.pinv[j])];
        }
    }
    s.C_col_ptr.assign(n + 1, 0);
    for (Index k = 0; k < n; ++k) s.C_col_ptr[k + 1] = s.C_col_ptr[k] + count[k];
    s.C_row_idx.resize(pattern.row_idx.size());
    s.scatter.resize(pattern.row_idx.size());
    {
        std::vector<std::pair<Index, Index>> entries;  // (column, row) in C, with source position
        std::vector<Index> next(s.C_col_ptr.begin(), s.C_col_ptr.end() - 1);
        for (Index j = 0; j < n; ++j) {
            for (Index p = pattern.col_ptr[j]; p < pattern.col_ptr[j + 1]; ++p) {
                const Index a = s.pinv[pattern.row_idx[p]];
                const Index b = s.pinv[j];
                const Index col = std::max(a, b);
                const Index pos = next[col]++;
                s.C_row_idx[pos] = std::min(a, b);
                s.scatter[p] = pos;
            }
        }
        // sort rows within each column, carrying the scatter positions along
        std::vector<Index> where(pattern.row_idx.size());
        for (std::size_t p = 0; p < s.scatter.size(); ++p) where[s.scatter[p]] = static_cast<Index>(p);
        for (Index k = 0; k < n; ++k) {
            const Index b = s.C_col_ptr[k], e = s.C_col_ptr[k + 1];
            std::vector<std::pair<Index, Index>> col;
            col.reserve(static_cast<std::size_t>(e - b));
            for (Index q = b; q < e; ++q) col.emplace_back(s.C_row_idx[q], where[q]);
            std::sort(col.begin(), col.end());
            for (Index q = b; q < e; ++q) {
                s.C_row_idx[q] = col[q - b].first;
                s.scatter[col[q - b].second] = q;
            }
        }
    }

    // elimination tree and column counts
    s.parent.assign(n, -1);
    s.col_counts.assign(n, 0);
    std::vector<Index> flag(n, -1);
    for (Index k = 0; k < n; ++k) {
        flag[k] = k;
        for (Index p = s.C_col_ptr[k]; p < s.C_col_ptr[k + 1]; ++p) {
            Index i = s.C_row_idx[p];
            for (; i < k && flag[i] != k; i = s.parent[i]) {
                if (s.parent[i] == -1) s.parent[i] = k;
                ++s.col_counts[i];
                flag[i] = k;
            }
        }
    }
    s.L_col_ptr.assign(n + 1, 0);
    for (Index k = 0; k < n; ++k) s.L_col_ptr[k + 1] = s.L_col_ptr[k] + s.col_counts[k];

    // row indices of L: row k of L is the set of tree nodes reached from C(:, k)
    s.L_row_idx.resize(static_cast<std::size_t>(s.L_col_ptr[n]));
    std::vector<Index> fill(n, 0);
    std::fill(flag.begin(), flag.end(), -1);
    for (Index k = 0; k < n; ++k) {
        flag[k] = k;
        for (Index p = s.C_col_ptr[k]; p < s.C_col_ptr[k + 1]; ++p) {
            for (Index i = s.C_row_idx[p]; i < k && flag[i] != k; i = s.parent[i]) {
                s.L_row_idx[s.L_col_ptr[i] + fill[i]++] = k;
                flag[i] = k;
            }
        }
    }
    return s;
}

inline SymbolicFactor analyze(const SparseSymMatrix& pattern, Ordering ordering = Ordering::Amd) {
    detail::check_pattern(pattern);
    std::vector<Index> perm;
    if (ordering == Ordering::Amd) {
        perm = detail::amd_order(pattern);
    } else {
        perm.resize(static_cast<std::size_t>(pattern.n));
        std::iota(perm.begin(), perm.end(), Index{0});
    }
    return analyze(pattern, perm);
}

/// P A P^T = L D L^T with unit lower-triangular L.
class NumericFactor {
public:
    static constexpr double kPivotTol = 1e-300;

    NumericFactor(std::shared_ptr<const SymbolicFactor> sym, const SparseSymMatrix& a) : sym_(std::move(sym)) {
        const SymbolicFactor& s = *sym_;
        if (a.n != s.n || a.col_ptr != s.A_col_ptr || a.row_idx != s.A_row_idx) {
            throw NumericError("factorize: matrix pattern differs from the analysed pattern");
        }
        const Index n = s.n;
        std::vector<double> cx(a.values.size());
        for (std::size_t p = 0; p < a.values.size(); ++p) cx[s.scatter[p]] = a.values[p];

        Lx_.assign(s.L_row_idx.size(), 0.0);
        D_.assign(n, 0.0);
        std::vector<double> y(n, 0.0);
        std::vector<Index> pattern(n), flag(n, -1), lnz(n, 0);
        for (Index k = 0; k < n; ++k) {
            Index top = n;
            flag[k] = k;
            for (Index p = s.C_col_ptr[k]; p < s.C_col_ptr[k + 1]; ++p) {
                Index i = s.C_row_idx[p];
                y[i] += cx[p];
                Index len = 0;
                for (; flag[i] != k; i = s.parent[i]) {
                    pattern[len++] = i;
                    flag[i] = k;
                }
                while (len > 0) pattern[--top] = pattern[--len];
            }
            double dk = y[k];
            y[k] = 0.0;
            for (; top < n; ++top) {
                const Index i = pattern[top];
                const double yi = y[i];
                y[i] = 0.0;
                const Index p2 = s.L_col_ptr[i] + lnz[i];
                for (Index p = s.L_col_ptr[i]; p < p2; ++p) y[s.L_row_idx[p]] -= Lx_[p] * yi;
                const double lki = yi / D_[i];
                dk -= lki * yi;
                Lx_[p2] = lki;
                ++lnz[i];
            }
            if (!(dk > kPivotTol)) {
                throw NumericError("factorize: matrix is not positive definite (pivot " + std::to_string(k) +
                                   " = " + std::to_string(dk) + ")");
            }
            D_[k] = dk;
        }
    }

    const SymbolicFactor& symbolic() const { return *sym_; }
    std::shared_ptr<const SymbolicFactor> symbolic_ptr() const { return sym_; }
    Index n() const { return sym_->n; }
    const std::vector<double>& D() const { return D_; }
    const std::vector<double>& L_values() const { return Lx_; }

    double logdet() const {
        double out = 0.0;
        for (double d : D_) out += std::log(d);
        return out;
    }

    /// Solves Q x = b column by column.
    Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const {
        const SymbolicFactor& s = *sym_;
        if (rhs.rows() != s.n) throw NumericError("solve: right-hand side has wrong row count");
        Eigen::MatrixXd out(rhs.rows(), rhs.cols());
        Eigen::VectorXd x(s.n);
        for (Index c = 0; c < rhs.cols(); ++c) {
            for (Index k = 0; k < s.n; ++k) x[k] = rhs(s.perm[k], c);
            lower_solve(x);
            for (Index k = 0; k < s.n; ++k) x[k] /= D_[k];
            for (Index j = s.n - 1; j >= 0; --j) {
                double xj = x[j];
                for (Index p = s.L_col_ptr[j]; p < s.L_col_ptr[j + 1]; ++p) xj -= Lx_[p] * x[s.L_row_idx[p]];
                x[j] = xj;
            }
            for (Index k = 0; k < s.n; ++k) out(s.perm[k], c) = x[k];
        }
        return out;
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
        return solve(Eigen::MatrixXd(rhs)).col(0);
    }

    /// Scratch space for `inverse_quadratic`; one per thread.
    struct Workspace {
        std::vector<double> x;
        std::vector<Index> mark;
        std::vector<Index> reach;
        Index stamp = 0;
    };

    Workspace make_workspace() const {
        return Workspace{std::vector<double>(sym_->n, 0.0), std::vector<Index>(sym_->n, -1), {}, 0};
    }

    /// b^T Q^{-1} b for a sparse b given as (index, value) pairs. Only the
    /// elimination-tree reach of b is visited.
    double inverse_quadratic(std::span<const Index> idx, std::span<const double> val, Workspace& ws) const {
        const SymbolicFactor& s = *sym_;
        ++ws.stamp;
        ws.reach.clear();
        for (std::size_t t = 0; t < idx.size(); ++t) {
            for (Index i = s.pinv[idx[t]]; i != -1 && ws.mark[i] != ws.stamp; i = s.parent[i]) {
                ws.mark[i] = ws.stamp;
                ws.reach.push_back(i);
            }
            ws.x[s.pinv[idx[t]]] += val[t];
        }
        std::sort(ws.reach.begin(), ws.reach.end());
        double out = 0.0;
        for (Index j : ws.reach) {
            const double xj = ws.x[j];
            if (xj != 0.0) {
                for (Index p = s.L_col_ptr[j]; p < s.L_col_ptr[j + 1]; ++p) ws.x[s.L_row_idx[p]] -= Lx_[p] * xj;
                out += xj * xj / D_[j];
            }
            ws.x[j] = 0.0;
        }
        return out;
    }

    /// Dense L (unit diagonal) in the permuted ordering, for diagnostics and tests.
    Eigen::MatrixXd dense_L() const {
        const SymbolicFactor& s = *sym_;
        Eigen::MatrixXd L = Eigen::MatrixXd::Identity(s.n, s.n);
        for (Index j = 0; j < s.n; ++j) {
            for (Index p = s.L_col_ptr[j]; p < s.L_col_ptr[j + 1]; ++p) L(s.L_row_idx[p], j) = Lx_[p];
        }
        return L;
    }

private:
    void lower_solve(Eigen::VectorXd& x) const {
        const SymbolicFactor& s = *sym_;
        for (Index j = 0; j < s.n; ++j) {
            const double xj = x[j];
            if (xj == 0.0) continue;
            for (Index p = s.L_col_ptr[j]; p < s.L_col_ptr[j + 1]; ++p) x[s.L_row_idx[p]] -= Lx_[p] * xj;
        }
    }

    std::shared_ptr<const SymbolicFactor> sym_;
    std::vector<double> Lx_;
    std::vector<double> D_;
};

inline NumericFactor factorize(std::shared_ptr<const SymbolicFactor> sym, const SparseSymMatrix& values) {
    return NumericFactor(std::move(sym), values);
}

inline Eigen::MatrixXd solve(const NumericFactor& fac, const Eigen::MatrixXd& rhs) { return fac.solve(rhs); }

inline double logdet(const NumericFactor& fac) { return fac.logdet(); }

/// Coordinate dump of the full symmetric pattern, one "row col" pair per line.
inline void write_pattern(std::ostream& os, const SparseSymMatrix& a) {
    os << "# n=" << a.n << " nnz=" << a.nnz_full() << '\n';
    for (Index j = 0; j < a.n; ++j) {
        for (Index p = a.col_ptr[j]; p < a.col_ptr[j + 1]; ++p) {
            os << a.row_idx[p] << ' ' << j << '\n';
            if (a.row_idx[p] != j) os << j << ' ' << a.row_idx[p] << '\n';
        }
    }
}

}  // namespace ismra
