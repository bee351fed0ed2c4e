#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/skew_normal.hpp>

#include "error.hpp"

namespace ismra {

/// Skewness bound below which the method of moments has a skew-normal solution.
inline constexpr double kMaxSkewNormalSkewness = 0.9952;

struct SkewNormalParams {
    double location = 0.0;  ///< xi
    double scale = 1.0;     ///< omega
    double shape = 0.0;     ///< alpha
};

struct Moments {
    double mean = 0.0;
    double sd = 0.0;
    double skewness = 0.0;
};

inline Moments skew_normal_moments(const SkewNormalParams& p) {
    const double delta = p.shape / std::sqrt(1.0 + p.shape * p.shape);
    const double b = delta * std::sqrt(2.0 / std::numbers::pi);
    const double var_unit = 1.0 - b * b;
    Moments m;
    m.mean = p.location + p.scale * b;
    m.sd = p.scale * std::sqrt(var_unit);
    m.skewness = 0.5 * (4.0 - std::numbers::pi) * b * b * b / std::pow(var_unit, 1.5);
    return m;
}

/// Method-of-moments fit; empty when |skewness| is outside the attainable range.
inline std::optional<SkewNormalParams> fit_skew_normal(const Moments& m) {
    if (!(m.sd > 0.0) || !std::isfinite(m.skewness) || std::abs(m.skewness) >= kMaxSkewNormalSkewness) {
        return std::nullopt;
    }
    const double g = std::abs(m.skewness);
    const double c = std::cbrt(2.0 * g / (4.0 - std::numbers::pi));
    const double u = std::sqrt(c * c / (1.0 + c * c));  // |b| = |delta| sqrt(2/pi)
    const double delta = std::copysign(u * std::sqrt(0.5 * std::numbers::pi), m.skewness);
    if (std::abs(delta) >= 1.0) return std::nullopt;
    SkewNormalParams p;
    p.shape = delta / std::sqrt(1.0 - delta * delta);
    p.scale = m.sd / std::sqrt(1.0 - u * u);
    p.location = m.mean - p.scale * std::copysign(u, m.skewness);
    return p;
}

inline double skew_normal_quantile(const SkewNormalParams& p, double prob) {
    const boost::math::skew_normal_distribution<double> dist(p.location, p.scale, p.shape);
    return boost::math::quantile(dist, prob);
}

/// Smallest value whose cumulative normalized weight reaches `prob`.
inline double weighted_quantile(std::span<const double> values, std::span<const double> weights, double prob) {
    if (values.empty() || values.size() != weights.size()) throw DataError("weighted_quantile: bad input sizes");
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    double cum = 0.0;
    for (std::size_t i : order) {
        cum += weights[i] / total;
        if (cum >= prob - 1e-12) return values[i];
    }
    return values[order.back()];
}

enum class IntervalMethod { SkewNormal, EmpiricalQuantile, Degenerate };

inline const char* to_string(IntervalMethod m) {
    switch (m) {
        case IntervalMethod::SkewNormal: return "skew_normal";
        case IntervalMethod::EmpiricalQuantile: return "empirical_quantile";
        case IntervalMethod::Degenerate: return "degenerate";
    }
    return "?";
}

struct MarginalSummary {
    double mean = 0.0;
    double sd = 0.0;
    double skewness = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    IntervalMethod method = IntervalMethod::SkewNormal;
};

/// Quantile function used when the skew-normal fit is unavailable.
using QuantileFunction = std::function<double(double)>;

/// 95% interval from moments: moment-matched skew-normal when feasible,
/// otherwise the supplied quantile function.
inline MarginalSummary summarize(const Moments& m, const QuantileFunction& fallback, double level = 0.95) {
    MarginalSummary s;
    s.mean = m.mean;
    s.sd = m.sd;
    s.skewness = m.skewness;
    const double lo = 0.5 * (1.0 - level), hi = 1.0 - lo;
    if (!(m.sd > 1e-14 * std::max(1.0, std::abs(m.mean)))) {
        s.sd = 0.0;
        s.skewness = 0.0;
        s.ci_low = s.ci_high = m.mean;
        s.method = IntervalMethod::Degenerate;
        return s;
    }
    if (const auto p = fit_skew_normal(m)) {
        s.ci_low = skew_normal_quantile(*p, lo);
        s.ci_high = skew_normal_quantile(*p, hi);
        s.method = IntervalMethod::SkewNormal;
    } else {
        s.ci_low = fallback(lo);
        s.ci_high = fallback(hi);
        s.method = IntervalMethod::EmpiricalQuantile;
    }
    return s;
}

/// Weighted mean, sd and skewness of atoms.
inline Moments weighted_moments(std::span<const double> values, std::span<const double> weights) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    Moments m;
    for (std::size_t i = 0; i < values.size(); ++i) m.mean += weights[i] / total * values[i];
    double m2 = 0.0, m3 = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double d = values[i] - m.mean;
        m2 += weights[i] / total * d * d;
        m3 += weights[i] / total * d * d * d;
    }
    m.sd = std::sqrt(m2);
    m.skewness = m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
    return m;
}

/// Summary of weighted atoms; the fallback is the weighted empirical quantile.
inline MarginalSummary summarize_atoms(std::span<const double> values, std::span<const double> weights) {
    const Moments m = weighted_moments(values, weights);
    return summarize(m, [&](double p) { return weighted_quantile(values, weights, p); });
}

/// Moments of a weighted mixture of normals N(mu_i, var_i).
inline Moments mixture_moments(std::span<const double> w, std::span<const double> mu, std::span<const double> var) {
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    Moments m;
    for (std::size_t i = 0; i < w.size(); ++i) m.mean += w[i] / total * mu[i];
    double m2 = 0.0, m3 = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double d = mu[i] - m.mean;
        m2 += w[i] / total * (d * d + var[i]);
        m3 += w[i] / total * (d * d * d + 3.0 * d * var[i]);
    }
    m.sd = std::sqrt(std::max(m2, 0.0));
    m.skewness = m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
    return m;
}

/// Quantile of a normal mixture by bisection on its CDF.
inline double mixture_quantile(std::span<const double> w, std::span<const double> mu, std::span<const double> var,
                               double prob) {
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    double lo = 1e300, hi = -1e300;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] <= 0.0) continue;
        const double s = std::sqrt(std::max(var[i], 0.0));
        lo = std::min(lo, mu[i] - 10.0 * s);
        hi = std::max(hi, mu[i] + 10.0 * s);
    }
    auto cdf = [&](double x) {
        double c = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (w[i] <= 0.0) continue;
            const double s = std::sqrt(std::max(var[i], 0.0));
            c += w[i] / total * (s > 0.0 ? 0.5 * std::erfc(-(x - mu[i]) / (s * std::numbers::sqrt2)) : (x >= mu[i] ? 1.0 : 0.0));
        }
        return c;
    };
    for (int it = 0; it < 200 && hi - lo > 1e-12 * std::max(1.0, std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        (cdf(mid) < prob ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace ismra
