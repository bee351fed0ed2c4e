#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "ismra/sparse.hpp"

using namespace ismra;

namespace {

Eigen::MatrixXd random_spd(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    Eigen::MatrixXd B(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) B(i, j) = z(rng);
    }
    return B.transpose() * B + Eigen::MatrixXd::Identity(n, n);
}

/// Random SPD matrix with a random sparsity pattern (diagonally dominant).
Eigen::MatrixXd random_sparse_spd(int n, double density, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    for (int j = 0; j < n; ++j) {
        for (int i = j + 1; i < n; ++i) {
            if (u(rng) < density) A(i, j) = A(j, i) = u(rng) - 0.5;
        }
    }
    for (int i = 0; i < n; ++i) A(i, i) = A.row(i).cwiseAbs().sum() + 1.0 + u(rng);
    return A;
}

Eigen::MatrixXd permuted(const Eigen::MatrixXd& A, const SymbolicFactor& s) {
    Eigen::MatrixXd out(A.rows(), A.cols());
    for (Index i = 0; i < s.n; ++i) {
        for (Index j = 0; j < s.n; ++j) out(i, j) = A(s.perm[i], s.perm[j]);
    }
    return out;
}

Eigen::MatrixXd reconstruct(const NumericFactor& f) {
    const Eigen::MatrixXd L = f.dense_L();
    const Eigen::VectorXd D = Eigen::Map<const Eigen::VectorXd>(f.D().data(), static_cast<Eigen::Index>(f.D().size()));
    return L * D.asDiagonal() * L.transpose();
}

SparseSymMatrix arrowhead(int n) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) * static_cast<double>(n);
    for (int i = 1; i < n; ++i) A(i, 0) = A(0, i) = 1.0;
    return SparseSymMatrix::from_dense(A);
}

}  // namespace

TEST(SparseMatrixTest, ValidateDetectsBadStorage) {
    SparseMatrix m;
    m.n_rows = 3;
    m.n_cols = 2;
    m.col_ptr = {0, 2, 3};
    m.row_idx = {0, 2, 1};
    m.values = {1, 2, 3};
    EXPECT_NO_THROW(m.validate());
    m.row_idx = {2, 0, 1};
    EXPECT_THROW(m.validate(), NumericError);
    m.row_idx = {0, 3, 1};
    EXPECT_THROW(m.validate(), NumericError);
    const Eigen::MatrixXd d = SparseMatrix{3, 2, {0, 2, 3}, {0, 2, 1}, {1, 2, 3}}.to_dense();
    EXPECT_EQ(d(2, 0), 2.0);
    EXPECT_EQ(d(1, 1), 3.0);
}

TEST(SparseSym, FromDenseRoundTripAndMultiply) {
    const Eigen::MatrixXd A = random_sparse_spd(12, 0.3, 1);
    const auto S = SparseSymMatrix::from_dense(A);
    EXPECT_EQ(S.to_dense(), A);
    const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(12, -1.0, 2.0);
    EXPECT_LE((S.multiply(x) - A * x).norm(), 1e-12);
    EXPECT_EQ(S.nnz_full(), (A.array() != 0.0).count());
    EXPECT_GE(S.find(5, 5), 0);
    EXPECT_EQ(S.find(3, 7), S.find(7, 3));
}

TEST(Analyze, IdentityHasNoFill) {
    const auto I = SparseSymMatrix::from_dense(Eigen::MatrixXd::Identity(5, 5));
    const auto s = analyze(I);
    EXPECT_EQ(s.nnz_L(), 0);
    std::vector<Index> sorted = s.perm;
    std::sort(sorted.begin(), sorted.end());
    for (Index i = 0; i < 5; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Analyze, TridiagonalNaturalOrderFillsOnlySubdiagonal) {
    Eigen::MatrixXd A = 4.0 * Eigen::MatrixXd::Identity(4, 4);
    for (int i = 0; i + 1 < 4; ++i) A(i + 1, i) = A(i, i + 1) = -1.0;
    const auto S = SparseSymMatrix::from_dense(A);
    const auto s = analyze(S, Ordering::Natural);
    EXPECT_EQ(s.nnz_L(), 3);
    const NumericFactor f(std::make_shared<const SymbolicFactor>(s), S);
    const Eigen::MatrixXd L = f.dense_L();
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < i; ++j) {
            if (i == j + 1) {
                EXPECT_NE(L(i, j), 0.0);
            } else {
                EXPECT_EQ(L(i, j), 0.0);
            }
        }
    }
    // hand elimination: d1 = 4, l = -1/4, d2 = 4 - 1/4, ...
    EXPECT_DOUBLE_EQ(f.D()[0], 4.0);
    EXPECT_DOUBLE_EQ(f.D()[1], 4.0 - 0.25);
    EXPECT_DOUBLE_EQ(L(1, 0), -0.25);
}

TEST(Analyze, ArrowheadDenseRowLastGivesZeroFill) {
    const int n = 5;
    const auto S = arrowhead(n);
    const auto natural = analyze(S, Ordering::Natural);
    std::vector<Index> reversed(n);
    std::iota(reversed.rbegin(), reversed.rend(), Index{0});
    const auto rev = analyze(S, reversed);
    // the dense row/column first fills everything; last fills nothing beyond A
    EXPECT_EQ(natural.nnz_L(), n * (n - 1) / 2);
    EXPECT_EQ(rev.nnz_L(), n - 1);
    const auto amd = analyze(S);
    EXPECT_EQ(amd.nnz_L(), n - 1);
    EXPECT_EQ(amd.perm.back(), 0);
}

TEST(Analyze, RejectsMissingDiagonalAndBadPermutation) {
    SparseSymMatrix S;
    S.n = 2;
    S.col_ptr = {0, 2, 2};
    S.row_idx = {0, 1};
    S.values = {1, 0.5};
    EXPECT_THROW(analyze(S), NumericError);
    const auto ok = SparseSymMatrix::from_dense(Eigen::MatrixXd::Identity(3, 3));
    const std::vector<Index> dup{0, 0, 2};
    EXPECT_THROW(analyze(ok, dup), NumericError);
}

TEST(Analyze, DeterministicAndValueIndependent) {
    Eigen::MatrixXd A = random_sparse_spd(30, 0.1, 2);
    const auto S1 = SparseSymMatrix::from_dense(A);
    auto S2 = S1;
    for (double& v : S2.values) v *= 3.0;
    const auto a = analyze(S1), b = analyze(S2);
    EXPECT_EQ(a.perm, b.perm);
    EXPECT_EQ(a.L_row_idx, b.L_row_idx);
    EXPECT_EQ(a.parent, b.parent);
}

TEST(Factorize, IdentityAndDiagonal) {
    const auto I = SparseSymMatrix::from_dense(Eigen::MatrixXd::Identity(4, 4));
    const auto fi = factorize(std::make_shared<const SymbolicFactor>(analyze(I)), I);
    EXPECT_EQ(fi.dense_L(), Eigen::MatrixXd::Identity(4, 4));
    for (double d : fi.D()) EXPECT_EQ(d, 1.0);
    EXPECT_EQ(logdet(fi), 0.0);

    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2, 2);
    A(0, 0) = 2.0;
    A(1, 1) = 3.0;
    const auto S = SparseSymMatrix::from_dense(A);
    const auto f = factorize(std::make_shared<const SymbolicFactor>(analyze(S, Ordering::Natural)), S);
    EXPECT_EQ(f.D()[0], 2.0);
    EXPECT_EQ(f.D()[1], 3.0);
    EXPECT_NEAR(logdet(f), std::log(6.0), 1e-15);
}

TEST(Factorize, DenseSpdReconstruction) {
    for (int seed = 0; seed < 5; ++seed) {
        const Eigen::MatrixXd A = random_spd(8, 10 + seed);
        const auto S = SparseSymMatrix::from_dense(A);
        const auto sym = std::make_shared<const SymbolicFactor>(analyze(S));
        const NumericFactor f(sym, S);
        const double rel = (reconstruct(f) - permuted(A, *sym)).norm() / A.norm();
        EXPECT_LE(rel, 1e-10);
        const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(A).eigenvalues();
        EXPECT_NEAR(f.logdet(), ev.array().log().sum(), 1e-9);
    }
}

TEST(Factorize, SparseReconstruction) {
    const Eigen::MatrixXd A = random_sparse_spd(60, 0.05, 3);
    const auto S = SparseSymMatrix::from_dense(A);
    const auto sym = std::make_shared<const SymbolicFactor>(analyze(S));
    const NumericFactor f(sym, S);
    EXPECT_LE((reconstruct(f) - permuted(A, *sym)).norm() / A.norm(), 1e-12);
    // stored pattern of L is never exceeded: entries outside it are zero by construction,
    // and every stored position is a structurally possible fill
    EXPECT_EQ(static_cast<Index>(f.L_values().size()), sym->nnz_L());
}

TEST(Factorize, NotPositiveDefiniteReportsPivot) {
    Eigen::MatrixXd A(2, 2);
    A << 1.0, 2.0, 2.0, 1.0;
    const auto S = SparseSymMatrix::from_dense(A);
    const auto sym = std::make_shared<const SymbolicFactor>(analyze(S, Ordering::Natural));
    try {
        NumericFactor f(sym, S);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("pivot 1"), std::string::npos) << e.what();
    }
}

TEST(Factorize, PatternMismatchRejected) {
    const auto S = SparseSymMatrix::from_dense(random_sparse_spd(10, 0.2, 4));
    const auto sym = std::make_shared<const SymbolicFactor>(analyze(S));
    const auto other = SparseSymMatrix::from_dense(Eigen::MatrixXd::Identity(10, 10));
    EXPECT_THROW(NumericFactor(sym, other), NumericError);
}

TEST(Solve, Examples) {
    const auto I = SparseSymMatrix::from_dense(Eigen::MatrixXd::Identity(3, 3));
    const auto fi = factorize(std::make_shared<const SymbolicFactor>(analyze(I)), I);
    const Eigen::VectorXd r = Eigen::Vector3d(1.0, -2.0, 5.0);
    EXPECT_EQ(fi.solve(r), r);

    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(2, 2);
    D(0, 0) = 2.0;
    D(1, 1) = 4.0;
    const auto S = SparseSymMatrix::from_dense(D);
    const auto f = factorize(std::make_shared<const SymbolicFactor>(analyze(S)), S);
    EXPECT_EQ(f.solve(Eigen::VectorXd(Eigen::Vector2d(2.0, 4.0))), Eigen::VectorXd(Eigen::Vector2d(1.0, 1.0)));
    EXPECT_THROW(f.solve(Eigen::VectorXd(Eigen::VectorXd::Ones(3))), NumericError);
}

TEST(Solve, MatchesDenseInverse) {
    const Eigen::MatrixXd A = random_spd(10, 77);
    const auto S = SparseSymMatrix::from_dense(A);
    const auto f = factorize(std::make_shared<const SymbolicFactor>(analyze(S)), S);
    const Eigen::MatrixXd rhs = Eigen::MatrixXd::Random(10, 3);
    const Eigen::MatrixXd x = solve(f, rhs);
    const Eigen::MatrixXd oracle = A.inverse() * rhs;
    EXPECT_LE((x - oracle).norm(), 1e-8 * oracle.norm());
    EXPECT_LE((A * x - rhs).norm(), 1e-8 * rhs.norm());
}

TEST(Solve, RecoversRandomVector) {
    const Eigen::MatrixXd A = random_sparse_spd(80, 0.04, 6);
    const auto S = SparseSymMatrix::from_dense(A);
    const auto f = factorize(std::make_shared<const SymbolicFactor>(analyze(S)), S);
    const Eigen::VectorXd x = Eigen::VectorXd::Random(80);
    EXPECT_LE((f.solve(S.multiply(x)) - x).norm(), 1e-8 * x.norm());
}

TEST(Reuse, AnalyzeOnceFactorizeTwice) {
    const Eigen::MatrixXd A = random_sparse_spd(40, 0.08, 8);
    const auto S1 = SparseSymMatrix::from_dense(A);
    auto S2 = S1;
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    // rescale symmetrically: D S D keeps the pattern and positive definiteness
    Eigen::VectorXd d(40);
    for (auto& x : d) x = u(rng);
    for (Index j = 0; j < S2.n; ++j) {
        for (Index p = S2.col_ptr[j]; p < S2.col_ptr[j + 1]; ++p) S2.values[p] *= d[S2.row_idx[p]] * d[j];
    }
    const auto sym = std::make_shared<const SymbolicFactor>(analyze(S1));
    const NumericFactor f1(sym, S1), f2(sym, S2);
    const Eigen::VectorXd b = Eigen::VectorXd::Random(40);
    EXPECT_LE((f1.solve(b) - S1.to_dense().ldlt().solve(b)).norm(), 1e-8 * b.norm());
    EXPECT_LE((f2.solve(b) - S2.to_dense().ldlt().solve(b)).norm(), 1e-8 * b.norm());
    EXPECT_EQ(&f1.symbolic(), &f2.symbolic());
}

TEST(InverseQuadratic, MatchesDense) {
    const Eigen::MatrixXd A = random_sparse_spd(50, 0.06, 12);
    const auto S = SparseSymMatrix::from_dense(A);
    const auto f = factorize(std::make_shared<const SymbolicFactor>(analyze(S)), S);
    const Eigen::MatrixXd Ainv = A.inverse();
    auto ws = f.make_workspace();
    std::mt19937_64 rng(13);
    std::uniform_int_distribution<int> pick(0, 49);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<Index> idx;
        std::vector<double> val;
        Eigen::VectorXd b = Eigen::VectorXd::Zero(50);
        for (int k = 0; k < 1 + rep % 5; ++k) {
            const int i = pick(rng);
            if (std::find(idx.begin(), idx.end(), i) != idx.end()) continue;
            idx.push_back(i);
            val.push_back(0.3 * (k + 1));
            b[i] = val.back();
        }
        const double q = f.inverse_quadratic(idx, val, ws);
        EXPECT_NEAR(q, b.dot(Ainv * b), 1e-10 * std::max(1.0, q));
    }
}

TEST(PatternDump, CoordinateFormat) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(3, 3);
    A(2, 0) = A(0, 2) = 0.5;
    std::ostringstream os;
    write_pattern(os, SparseSymMatrix::from_dense(A));
    EXPECT_EQ(os.str(), "# n=3 nnz=5\n0 0\n2 0\n0 2\n1 1\n2 2\n");
}
