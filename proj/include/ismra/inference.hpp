#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "covariance.hpp"
#include "error.hpp"
#include "mra.hpp"
#include "optimize.hpp"
#include "parallel.hpp"
#include "skew_normal.hpp"

namespace ismra {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// The four terms of log p(Psi) + log p(v|Psi) + log p(y|v,Psi) - log p(v|Psi,y).
struct PosteriorTerms {
    double log_prior = 0.0;
    double log_p_v = 0.0;
    double log_p_y = 0.0;
    double log_p_v_given_y = 0.0;

    double value() const { return log_prior + log_p_v + log_p_y - log_p_v_given_y; }
    /// log p(y | Psi), i.e. the value without the hyperprior.
    double evidence() const { return log_p_v + log_p_y - log_p_v_given_y; }
};

namespace detail {

/// v^T blockdiag(Sigma_beta^{-1}, Gamma^{-1}) v.
inline double prior_quadratic(const GammaBlocks& gam, const Eigen::VectorXd& v, Index p, double beta_var) {
    double out = v.head(p).squaredNorm() / beta_var;
    Index base = p;
    for (const auto& V : gam.precision) {
        const auto m = V.rows();
        if (m > 0) out += v.segment(base, m).dot(V.selfadjointView<Eigen::Lower>() * v.segment(base, m));
        base += m;
    }
    return out;
}

}  // namespace detail

/// Posterior terms with every Gaussian density evaluated at `v`.
inline PosteriorTerms posterior_terms(const MraModel& model, const MraModel::Evaluation& ev, const Eigen::VectorXd& v) {
    const FullConditional& fc = ev.fc;
    const HyperParams& psi = fc.psi;
    const double log2pi = std::log(2.0 * std::numbers::pi);
    const auto N = static_cast<double>(model.dim());
    const auto n = static_cast<double>(model.data().y.size());
    const double z2 = std::exp(2.0 * psi.log_zeta);

    PosteriorTerms t;
    t.log_prior = log_hyper_prior(psi, model.priors());
    t.log_p_v = -0.5 * N * log2pi - 0.5 * (fc.logdet_sigma_beta + fc.logdet_gamma) -
                0.5 * detail::prior_quadratic(ev.prior.gamma, v, model.n_fixed(), model.priors().beta_prior_var);
    t.log_p_y = -0.5 * n * log2pi - n * psi.log_zeta - 0.5 * model.residual_ss(ev, v) / z2;
    const Eigen::VectorXd d = v - fc.mean;
    t.log_p_v_given_y = -0.5 * N * log2pi + 0.5 * fc.logdet_Q - 0.5 * d.dot(fc.Q.multiply(d));
    return t;
}

/// Terms at the full-conditional mean.
inline PosteriorTerms posterior_terms(const MraModel& model, const MraModel::Evaluation& ev) {
    return posterior_terms(model, ev, ev.fc.mean);
}

/// log p~(Psi | y); -inf when Q cannot be factorized at `psi`.
inline double log_unnormalized_posterior(const MraModel& model, const HyperParams& psi) {
    if (!psi.finite()) return kNegInf;
    try {
        const auto ev = model.evaluate(psi);
        const double v = posterior_terms(model, ev).value();
        return std::isfinite(v) ? v : kNegInf;
    } catch (const NumericError&) {
        return kNegInf;
    }
}

/// The posterior as an objective over the free log-hyperparameters.
inline Objective posterior_objective(const MraModel& model) {
    return [&model](std::span<const double> x) {
        return log_unnormalized_posterior(model, from_free_coordinates(x, model.priors()));
    };
}

struct InferenceOptions {
    int max_iter = 25;
    double grad_step = 1e-4;
    double hessian_step = 1e-3;
    int n_is = 100;
    std::uint64_t seed = 1;
    /// Drop per-sample factors after weighting; prediction then refits each sample.
    bool low_memory = false;
    /// Add the finest-resolution residual variance to predictive variances.
    bool include_residual_variance = true;
    double ess_warning_fraction = 0.05;
};

struct ModeResult {
    HyperParams psi;
    std::vector<double> x;
    double log_posterior = kNegInf;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
};

inline ModeResult find_mode(const Objective& f, std::span<const double> start, const InferenceOptions& opt = {}) {
    OptimizeOptions o;
    o.max_iter = opt.max_iter;
    o.grad_step = opt.grad_step;
    const auto r = maximize_lbfgs(f, start, o);
    ModeResult m;
    m.x = r.x;
    m.log_posterior = r.value;
    m.iterations = r.iterations;
    m.evaluations = r.evaluations;
    m.converged = r.converged;
    return m;
}

/// L-BFGS search for the posterior mode, starting from `start` (prior means by default).
inline ModeResult find_mode(const MraModel& model, std::optional<HyperParams> start = std::nullopt,
                            const InferenceOptions& opt = {}) {
    const PriorSpec& pr = model.priors();
    HyperParams s0 = start ? *start : HyperParams::from_array(pr.hyper_prior_mean);
    if (pr.fixed_log_zeta) s0.log_zeta = *pr.fixed_log_zeta;
    const auto x0 = free_coordinates(s0, pr);
    ModeResult m = find_mode(posterior_objective(model), x0, opt);
    m.psi = from_free_coordinates(m.x, pr);
    return m;
}

/// Gaussian proposal over the free log-hyperparameters.
struct Proposal {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    Eigen::MatrixXd chol;  ///< lower Cholesky factor of cov
    bool regularized = false;

    Index dim() const { return mean.size(); }

    double log_density(const Eigen::VectorXd& x) const {
        const Eigen::VectorXd z = chol.triangularView<Eigen::Lower>().solve(x - mean);
        return -0.5 * z.squaredNorm() - chol.diagonal().array().log().sum() -
               0.5 * static_cast<double>(dim()) * std::log(2.0 * std::numbers::pi);
    }

    static Proposal from_moments(Eigen::VectorXd mean, Eigen::MatrixXd cov) {
        Proposal p;
        p.mean = std::move(mean);
        p.cov = std::move(cov);
        Eigen::LLT<Eigen::MatrixXd> llt(p.cov);
        if (llt.info() != Eigen::Success) throw NumericError("proposal covariance is not positive definite");
        p.chol = llt.matrixL();
        return p;
    }
};

/// Inverse of the negated, symmetrized finite-difference Hessian at `mode`;
/// eigenvalues are floored at 1e-6 of the largest when it is not positive definite.
inline Proposal build_proposal(const Objective& f, std::span<const double> mode, double h = 1e-3) {
    const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(mode.data(), static_cast<Eigen::Index>(mode.size()));
    const Eigen::MatrixXd H = fd_hessian(f, x, h);
    const Eigen::MatrixXd A = -0.5 * (H + H.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
    Eigen::VectorXd lam = es.eigenvalues();
    bool regularized = false;
    if (lam.minCoeff() <= 0.0) {
        const double floor = 1e-6 * std::max(lam.cwiseAbs().maxCoeff(), 1e-300);
        lam = lam.cwiseMax(floor);
        regularized = true;
    }
    Eigen::MatrixXd cov = es.eigenvectors() * lam.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    cov = 0.5 * (cov + cov.transpose()).eval();
    Proposal p = Proposal::from_moments(x, cov);
    p.regularized = regularized;
    return p;
}

inline Proposal build_proposal(const MraModel& model, const HyperParams& mode, const InferenceOptions& opt = {}) {
    return build_proposal(posterior_objective(model), free_coordinates(mode, model.priors()), opt.hessian_step);
}

/// What prediction needs from one importance sample.
struct SampleFit {
    BasisSystem basis;
    Eigen::VectorXd mean;
    std::shared_ptr<const NumericFactor> factor;
};

struct ISSample {
    HyperParams psi;
    std::vector<double> x;
    double log_unnorm_post = kNegInf;
    double log_proposal = 0.0;
    double weight = 0.0;
    std::shared_ptr<const SampleFit> fit;
};

struct ISResult {
    std::vector<ISSample> samples;
    double log_c = kNegInf;  ///< log of the normalizing-constant estimate
    double ess = 0.0;
    bool degenerate = false;
    std::size_t failed = 0;  ///< draws whose posterior could not be evaluated
};

namespace detail {

inline std::vector<Eigen::VectorXd> draw_proposal(const Proposal& prop, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Eigen::VectorXd> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd z(prop.dim());
        for (auto& v : z) v = normal(rng);
        out.push_back(prop.mean + prop.chol * z);
    }
    return out;
}

/// Self-normalized weights from log target and log proposal values.
inline void normalize_weights(ISResult& res, double ess_fraction) {
    double mx = kNegInf;
    for (const auto& s : res.samples) mx = std::max(mx, s.log_unnorm_post - s.log_proposal);
    if (!std::isfinite(mx)) throw NumericError("importance sampling: every draw has zero posterior mass");
    double sum = 0.0;
    for (auto& s : res.samples) {
        const double r = s.log_unnorm_post - s.log_proposal;
        s.weight = std::isfinite(r) ? std::exp(r - mx) : 0.0;
        sum += s.weight;
    }
    double sq = 0.0;
    for (auto& s : res.samples) {
        s.weight /= sum;
        sq += s.weight * s.weight;
    }
    res.log_c = mx + std::log(sum) - std::log(static_cast<double>(res.samples.size()));
    res.ess = 1.0 / sq;
    res.degenerate = res.ess < ess_fraction * static_cast<double>(res.samples.size());
}

}  // namespace detail

/// Importance sampling against an arbitrary log target (used for testing the weighting).
inline ISResult importance_sample(const Proposal& prop, int n_is, std::uint64_t seed, const Objective& log_target,
                                  double ess_fraction = 0.05) {
    if (n_is < 2) throw ConfigError("n_is must be at least 2");
    const auto draws = detail::draw_proposal(prop, n_is, seed);
    ISResult res;
    res.samples.resize(draws.size());
    parallel_for(static_cast<std::ptrdiff_t>(draws.size()), [&](std::ptrdiff_t i) {
        ISSample& s = res.samples[static_cast<std::size_t>(i)];
        const auto& x = draws[static_cast<std::size_t>(i)];
        s.x.assign(x.data(), x.data() + x.size());
        s.log_unnorm_post = detail::eval_at(log_target, x);
        s.log_proposal = prop.log_density(x);
    });
    for (const auto& s : res.samples) res.failed += std::isfinite(s.log_unnorm_post) ? 0 : 1;
    detail::normalize_weights(res, ess_fraction);
    return res;
}

/// One posterior evaluation, keeping what prediction needs.
inline ISSample evaluate_sample(const MraModel& model, const HyperParams& psi, bool keep_fit = true) {
    ISSample s;
    s.psi = psi;
    s.x = free_coordinates(psi, model.priors());
    if (!psi.finite()) return s;
    try {
        auto ev = model.evaluate(psi);
        const double v = posterior_terms(model, ev).value();
        s.log_unnorm_post = std::isfinite(v) ? v : kNegInf;
        if (keep_fit && std::isfinite(v)) {
            s.fit = std::make_shared<const SampleFit>(SampleFit{std::move(ev.prior.basis), std::move(ev.fc.mean), ev.fc.factor});
        }
    } catch (const NumericError&) {
        s.log_unnorm_post = kNegInf;
    }
    return s;
}

/// Draws from the proposal, evaluates each draw (in parallel, sharing the
/// symbolic factorization held by the model), and normalizes the weights.
inline ISResult importance_sample(const MraModel& model, const Proposal& prop, const InferenceOptions& opt = {}) {
    if (opt.n_is < 2) throw ConfigError("n_is must be at least 2");
    const auto draws = detail::draw_proposal(prop, opt.n_is, opt.seed);
    ISResult res;
    res.samples.resize(draws.size());
    parallel_for(static_cast<std::ptrdiff_t>(draws.size()), [&](std::ptrdiff_t i) {
        const auto& x = draws[static_cast<std::size_t>(i)];
        const auto psi = from_free_coordinates(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                                               model.priors());
        ISSample s = evaluate_sample(model, psi, !opt.low_memory);
        s.x.assign(x.data(), x.data() + x.size());
        s.log_proposal = prop.log_density(x);
        res.samples[static_cast<std::size_t>(i)] = std::move(s);
    });
    for (const auto& s : res.samples) res.failed += std::isfinite(s.log_unnorm_post) ? 0 : 1;
    detail::normalize_weights(res, opt.ess_warning_fraction);
    return res;
}

/// A single sample with weight one at fixed hyperparameters.
inline ISResult fixed_hyperparameters(const MraModel& model, const HyperParams& psi) {
    ISResult res;
    res.samples.push_back(evaluate_sample(model, psi, true));
    if (!res.samples.front().fit) throw NumericError("model cannot be evaluated at the given hyperparameters");
    res.samples.front().weight = 1.0;
    res.log_c = res.samples.front().log_unnorm_post;
    res.ess = 1.0;
    return res;
}

struct NamedSummary {
    std::string name;
    MarginalSummary summary;
};

struct MarginalReport {
    std::vector<NamedSummary> hyper;  ///< free log-hyperparameters, then their natural-scale transforms
    std::vector<NamedSummary> fixed;  ///< fixed-effect coefficients
};

namespace detail {

inline std::shared_ptr<const SampleFit> fit_of(const MraModel& model, const ISSample& s) {
    if (s.fit) return s.fit;
    auto refit = evaluate_sample(model, s.psi, true);
    if (!refit.fit) throw NumericError("importance sample can no longer be evaluated");
    return refit.fit;
}

}  // namespace detail

/// Weighted-atom marginals for hyperparameters and Gaussian-mixture marginals
/// for the fixed effects.
inline MarginalReport marginal_summaries(const MraModel& model, const ISResult& is,
                                         const std::vector<std::string>& covariate_names = {}) {
    MarginalReport rep;
    const PriorSpec& pr = model.priors();
    std::vector<double> w;
    std::vector<const ISSample*> used;
    for (const auto& s : is.samples) {
        if (s.weight > 0.0) {
            w.push_back(s.weight);
            used.push_back(&s);
        }
    }
    if (used.empty()) throw NumericError("marginal summaries: no sample carries weight");

    const std::size_t dim = pr.free_dim();
    static const char* natural[] = {"sigma", "rho", "phi", "zeta"};
    std::vector<NamedSummary> nat;
    for (std::size_t d = 0; d < dim; ++d) {
        std::vector<double> vals, evals;
        for (const ISSample* s : used) {
            vals.push_back(s->psi.as_array()[d]);
            evals.push_back(std::exp(s->psi.as_array()[d]));
        }
        rep.hyper.push_back({kHyperNames[d], summarize_atoms(vals, w)});
        nat.push_back({natural[d], summarize_atoms(evals, w)});
    }
    rep.hyper.insert(rep.hyper.end(), nat.begin(), nat.end());

    const Index p = model.n_fixed();
    std::vector<std::vector<double>> mu(static_cast<std::size_t>(p), std::vector<double>(used.size()));
    std::vector<std::vector<double>> var = mu;
    parallel_for(static_cast<std::ptrdiff_t>(used.size()), [&](std::ptrdiff_t i) {
        const auto fit = detail::fit_of(model, *used[static_cast<std::size_t>(i)]);
        auto ws = fit->factor->make_workspace();
        for (Index j = 0; j < p; ++j) {
            const Index idx = j;
            const double one = 1.0;
            mu[j][static_cast<std::size_t>(i)] = fit->mean[j];
            var[j][static_cast<std::size_t>(i)] = fit->factor->inverse_quadratic({&idx, 1}, {&one, 1}, ws);
        }
    });
    for (Index j = 0; j < p; ++j) {
        const auto& m = mu[j];
        const auto& v = var[j];
        const Moments mom = mixture_moments(w, m, v);
        const std::string name = static_cast<std::size_t>(j) < covariate_names.size() ? covariate_names[j]
                                                                                       : "beta" + std::to_string(j);
        rep.fixed.push_back({name, summarize(mom, [&](double q) { return mixture_quantile(w, m, v, q); })});
    }
    return rep;
}

struct PredictionResult {
    Eigen::VectorXd mean;
    Eigen::VectorXd sd;
    Eigen::VectorXd ci_low;
    Eigen::VectorXd ci_high;
    std::vector<IntervalMethod> method;
};

/// Posterior predictive moments of new noisy responses, mixed over the
/// importance samples with the law of total variance.
inline PredictionResult predict(const MraModel& model, const ISResult& is, std::span<const SpatioTemporalPoint> pts,
                                const Eigen::MatrixXd& X_pred, const InferenceOptions& opt = {}) {
    const Index p = model.n_fixed();
    const auto np = static_cast<Eigen::Index>(pts.size());
    if (X_pred.rows() != np || X_pred.cols() != p) throw DataError("predict: covariate matrix does not match");
    std::vector<const ISSample*> used;
    std::vector<double> w;
    for (const auto& s : is.samples) {
        if (s.weight > 0.0) {
            used.push_back(&s);
            w.push_back(s.weight);
        }
    }
    if (used.empty()) throw NumericError("predict: no sample carries weight");

    const auto ns = static_cast<Eigen::Index>(used.size());
    Eigen::MatrixXd m(np, ns), v(np, ns);
    parallel_for(static_cast<std::ptrdiff_t>(used.size()), [&](std::ptrdiff_t i) {
        const ISSample& s = *used[static_cast<std::size_t>(i)];
        const auto fit = detail::fit_of(model, s);
        const auto rows = evaluate_basis_rows(fit->basis, pts);
        auto ws = fit->factor->make_workspace();
        const double z2 = std::exp(2.0 * s.psi.log_zeta);
        std::vector<Index> idx;
        std::vector<double> val;
        for (Eigen::Index k = 0; k < np; ++k) {
            const SparseRow& r = rows[static_cast<std::size_t>(k)];
            idx.clear();
            val.clear();
            double mean = 0.0;
            for (Index c = 0; c < p; ++c) {
                idx.push_back(c);
                val.push_back(X_pred(k, c));
                mean += X_pred(k, c) * fit->mean[c];
            }
            for (std::size_t t = 0; t < r.idx.size(); ++t) {
                idx.push_back(p + r.idx[t]);
                val.push_back(r.val[t]);
                mean += r.val[t] * fit->mean[p + r.idx[t]];
            }
            m(k, i) = mean;
            v(k, i) = fit->factor->inverse_quadratic(idx, val, ws) + z2 +
                      (opt.include_residual_variance ? r.residual_var : 0.0);
        }
    });

    PredictionResult out;
    out.mean.resize(np);
    out.sd.resize(np);
    out.ci_low.resize(np);
    out.ci_high.resize(np);
    out.method.resize(static_cast<std::size_t>(np));
    for (Eigen::Index k = 0; k < np; ++k) {
        std::vector<double> mu(static_cast<std::size_t>(ns)), var(static_cast<std::size_t>(ns));
        for (Eigen::Index i = 0; i < ns; ++i) {
            mu[static_cast<std::size_t>(i)] = m(k, i);
            var[static_cast<std::size_t>(i)] = v(k, i);
        }
        const Moments mom = mixture_moments(w, mu, var);
        const auto s = summarize(mom, [&](double q) { return mixture_quantile(w, mu, var, q); });
        out.mean[k] = mom.mean;
        out.sd[k] = mom.sd;
        out.ci_low[k] = s.ci_low;
        out.ci_high[k] = s.ci_high;
        out.method[static_cast<std::size_t>(k)] = s.method;
    }
    return out;
}

}  // namespace ismra
