#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace ismra {

/// Objective over a flat parameter vector; -inf marks an infeasible point.
using Objective = std::function<double(std::span<const double>)>;

struct OptimizeOptions {
    int max_iter = 25;
    double grad_step = 1e-4;
    int memory = 6;
    double grad_tol = 1e-7;
    int max_backtracks = 40;
};

struct OptimizeResult {
    std::vector<double> x;
    double value = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd gradient;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
};

namespace detail {

inline double eval_at(const Objective& f, const Eigen::VectorXd& x, int* counter = nullptr) {
    if (counter) ++*counter;
    const double v = f(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
    return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
}

}  // namespace detail

/// Central differences; falls back to a one-sided difference when one side is infeasible.
inline Eigen::VectorXd fd_gradient(const Objective& f, const Eigen::VectorXd& x, double h, double fx,
                                   int* counter = nullptr) {
    Eigen::VectorXd g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Eigen::VectorXd xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double fp = detail::eval_at(f, xp, counter);
        const double fm = detail::eval_at(f, xm, counter);
        if (std::isfinite(fp) && std::isfinite(fm)) {
            g[i] = (fp - fm) / (2.0 * h);
        } else if (std::isfinite(fp)) {
            g[i] = (fp - fx) / h;
        } else if (std::isfinite(fm)) {
            g[i] = (fx - fm) / h;
        } else {
            throw NumericError("finite-difference gradient: objective infeasible on both sides of coordinate " +
                               std::to_string(i));
        }
    }
    return g;
}

/// Central second differences with step h.
inline Eigen::MatrixXd fd_hessian(const Objective& f, const Eigen::VectorXd& x, double h) {
    const auto d = x.size();
    const double f0 = detail::eval_at(f, x);
    Eigen::MatrixXd H(d, d);
    auto shifted = [&](Eigen::Index i, double si, Eigen::Index j, double sj) {
        Eigen::VectorXd y = x;
        y[i] += si * h;
        y[j] += sj * h;
        return detail::eval_at(f, y);
    };
    for (Eigen::Index i = 0; i < d; ++i) {
        H(i, i) = (shifted(i, 1.0, i, 0.0) - 2.0 * f0 + shifted(i, -1.0, i, 0.0)) / (h * h);
        for (Eigen::Index j = 0; j < i; ++j) {
            const double v = (shifted(i, 1.0, j, 1.0) - shifted(i, 1.0, j, -1.0) - shifted(i, -1.0, j, 1.0) +
                              shifted(i, -1.0, j, -1.0)) /
                             (4.0 * h * h);
            H(i, j) = H(j, i) = v;
        }
    }
    if (!H.allFinite()) throw NumericError("finite-difference Hessian: objective infeasible near the point");
    return H;
}

/// Limited-memory BFGS ascent with finite-difference gradients and a
/// backtracking Armijo line search. Returns the best iterate seen.
inline OptimizeResult maximize_lbfgs(const Objective& f, std::span<const double> x0, const OptimizeOptions& opt = {}) {
    OptimizeResult res;
    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(x0.data(), static_cast<Eigen::Index>(x0.size()));
    double fx = detail::eval_at(f, x, &res.evaluations);
    if (!std::isfinite(fx)) throw NumericError("optimizer: objective is infeasible at the starting point");
    // work on the minimization problem of -f
    Eigen::VectorXd g = -fd_gradient(f, x, opt.grad_step, fx, &res.evaluations);
    std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> mem;

    for (res.iterations = 0; res.iterations < opt.max_iter; ++res.iterations) {
        if (g.lpNorm<Eigen::Infinity>() < opt.grad_tol) {
            res.converged = true;
            break;
        }
        // two-loop recursion
        Eigen::VectorXd q = g;
        std::vector<double> alpha(mem.size());
        for (std::size_t k = mem.size(); k-- > 0;) {
            const auto& [s, y] = mem[k];
            alpha[k] = s.dot(q) / y.dot(s);
            q -= alpha[k] * y;
        }
        if (!mem.empty()) {
            const auto& [s, y] = mem.back();
            q *= s.dot(y) / y.dot(y);
        } else {
            q *= std::min(1.0, 1.0 / g.norm());
        }
        for (std::size_t k = 0; k < mem.size(); ++k) {
            const auto& [s, y] = mem[k];
            const double beta = y.dot(q) / y.dot(s);
            q += (alpha[k] - beta) * s;
        }
        Eigen::VectorXd dir = -q;
        double slope = g.dot(dir);
        if (!(slope < 0.0)) {
            mem.clear();
            dir = -g * std::min(1.0, 1.0 / g.norm());
            slope = g.dot(dir);
        }

        double step = 1.0;
        bool accepted = false, any_finite = false;
        Eigen::VectorXd x_new;
        double f_new = 0.0;
        for (int b = 0; b < opt.max_backtracks; ++b, step *= 0.5) {
            x_new = x + step * dir;
            f_new = detail::eval_at(f, x_new, &res.evaluations);
            any_finite |= std::isfinite(f_new);
            if (std::isfinite(f_new) && -f_new <= -fx + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            if (!any_finite) throw NumericError("optimizer: every line-search evaluation failed");
            if (mem.empty()) break;
            mem.clear();  // retry once along steepest ascent
            continue;
        }
        const Eigen::VectorXd g_new = -fd_gradient(f, x_new, opt.grad_step, f_new, &res.evaluations);
        const Eigen::VectorXd s = x_new - x;
        const Eigen::VectorXd y = g_new - g;
        if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
            mem.emplace_back(s, y);
            if (static_cast<int>(mem.size()) > opt.memory) mem.pop_front();
        }
        const double improvement = f_new - fx;
        x = x_new;
        fx = f_new;
        g = g_new;
        if (improvement <= 1e-14 * (1.0 + std::abs(fx)) && g.lpNorm<Eigen::Infinity>() < 1e3 * opt.grad_tol) {
            res.converged = true;
            ++res.iterations;
            break;
        }
    }
    res.x.assign(x.data(), x.data() + x.size());
    res.value = fx;
    res.gradient = -g;
    return res;
}

}  // namespace ismra
