#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "covariance.hpp"
#include "data.hpp"
#include "error.hpp"
#include "inference.hpp"
#include "mra.hpp"
#include "oracle.hpp"
#include "parallel.hpp"
#include "partition.hpp"

namespace ismra {

using Json = nlohmann::ordered_json;

/// Settings of a run, read from a JSON object with flat keys (see README).
struct RunConfig {
    Schema schema;
    PartitionConfig partition;
    PriorSpec priors;
    InferenceOptions inference;
    std::optional<HyperParams> start;  ///< optimizer start on the log scale
    bool fixed_hyperparameters = false; ///< skip mode search and sampling; use `start`
    std::optional<std::uint64_t> seed;
    int threads = 0;

    // inputs (command-line flags take precedence)
    std::string train;
    std::string predict_at;
    std::string truth;

    // simulation
    std::size_t sim_n = 1500;
    int sim_days = 8;
    std::array<double, 2> sim_lon{73.15, 73.45};
    std::array<double, 2> sim_lat{18.45, 18.75};
    std::array<double, 2> sim_holdout_lon{73.25, 73.35};
    std::array<double, 2> sim_holdout_lat{18.55, 18.65};
    double sim_sigma = 4.140;
    double sim_rho = 5.660;
    double sim_phi = 3.601;
    double sim_zeta = 0.5;
    std::vector<double> sim_beta{30.0, 1.0};  ///< intercept, then one coefficient per simulated covariate

    HyperParams truth_psi() const {
        return {std::log(sim_sigma), std::log(sim_rho), std::log(sim_phi), std::log(sim_zeta)};
    }

    std::uint64_t require_seed() const {
        if (!seed) throw ConfigError("a seed is required (config key 'seed' or --seed)");
        return *seed;
    }

    void validate() const {
        partition.validate();
        try {
            priors.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        if (inference.max_iter < 0) throw ConfigError("max_iter must be >= 0");
        if (inference.n_is < 2) throw ConfigError("n_is must be at least 2");
        if (!(inference.grad_step > 0.0) || !(inference.hessian_step > 0.0)) throw ConfigError("step sizes must be positive");
        if (fixed_hyperparameters && !start) throw ConfigError("fixed_hyperparameters needs 'start'");
        if (threads < 0) throw ConfigError("threads must be >= 0");
        if (sim_n < 2) throw ConfigError("sim_n must be >= 2");
        if (sim_days < 1) throw ConfigError("sim_days must be >= 1");
        if (!(sim_lon[0] < sim_lon[1]) || !(sim_lat[0] < sim_lat[1])) throw ConfigError("empty simulation box");
        if (!(sim_sigma >= 0.0) || !(sim_rho > 0.0) || !(sim_phi > 0.0) || !(sim_zeta >= 0.0)) {
            throw ConfigError("simulation truth must have sigma, zeta >= 0 and rho, phi > 0");
        }
        if (sim_beta.empty()) throw ConfigError("sim_beta needs at least the intercept");
    }
};

namespace detail {

template <class T>
T get_as(const Json& v, const std::string& key) {
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
    }
}

template <std::size_t N>
std::array<double, N> get_array(const Json& v, const std::string& key) {
    const auto a = get_as<std::vector<double>>(v, key);
    if (a.size() != N) throw ConfigError("config key '" + key + "' needs " + std::to_string(N) + " numbers");
    std::array<double, N> out{};
    std::copy(a.begin(), a.end(), out.begin());
    return out;
}

}  // namespace detail

inline RunConfig parse_config(const Json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    RunConfig c;
    using detail::get_as;
    const std::map<std::string, std::function<void(const Json&, const std::string&)>> setters = {
        {"lon_column", [&](const Json& v, const std::string& k) { c.schema.lon = get_as<std::string>(v, k); }},
        {"lat_column", [&](const Json& v, const std::string& k) { c.schema.lat = get_as<std::string>(v, k); }},
        {"time_column", [&](const Json& v, const std::string& k) { c.schema.time = get_as<std::string>(v, k); }},
        {"time_format",
         [&](const Json& v, const std::string& k) {
             const auto s = get_as<std::string>(v, k);
             if (s == "day") c.schema.time_format = TimeFormat::Day;
             else if (s == "date") c.schema.time_format = TimeFormat::Date;
             else throw ConfigError("time_format must be 'day' or 'date'");
         }},
        {"response_column", [&](const Json& v, const std::string& k) { c.schema.response = get_as<std::string>(v, k); }},
        {"covariates",
         [&](const Json& v, const std::string& k) {
             c.schema.covariates.clear();
             for (const auto& s : get_as<std::vector<std::string>>(v, k)) c.schema.covariates.push_back(CovariateSpec::parse(s));
         }},
        {"intercept", [&](const Json& v, const std::string& k) { c.schema.intercept = get_as<bool>(v, k); }},
        {"n_lon_splits", [&](const Json& v, const std::string& k) { c.partition.n_lon_splits = get_as<int>(v, k); }},
        {"n_lat_splits", [&](const Json& v, const std::string& k) { c.partition.n_lat_splits = get_as<int>(v, k); }},
        {"n_time_splits", [&](const Json& v, const std::string& k) { c.partition.n_time_splits = get_as<int>(v, k); }},
        {"M0", [&](const Json& v, const std::string& k) { c.partition.M0 = get_as<int>(v, k); }},
        {"J", [&](const Json& v, const std::string& k) { c.partition.J = get_as<int>(v, k); }},
        {"thinning_rate", [&](const Json& v, const std::string& k) { c.partition.thinning_rate = get_as<double>(v, k); }},
        {"knot_budget",
         [&](const Json& v, const std::string& k) {
             const auto s = get_as<std::string>(v, k);
             if (s == "level_total") c.partition.budget_mode = KnotBudgetMode::LevelTotal;
             else if (s == "per_region") c.partition.budget_mode = KnotBudgetMode::PerRegion;
             else throw ConfigError("knot_budget must be 'level_total' or 'per_region'");
         }},
        {"knots_per_region", [&](const Json& v, const std::string& k) { c.partition.knots_per_region = get_as<int>(v, k); }},
        {"knot_placement",
         [&](const Json& v, const std::string& k) {
             const auto s = get_as<std::string>(v, k);
             if (s == "prism") c.partition.placement = KnotPlacement::Prism;
             else if (s == "uniform_random") c.partition.placement = KnotPlacement::UniformRandom;
             else throw ConfigError("knot_placement must be 'prism' or 'uniform_random'");
         }},
        {"prism_span", [&](const Json& v, const std::string& k) { c.partition.prism_span = get_as<double>(v, k); }},
        {"prism_jitter", [&](const Json& v, const std::string& k) { c.partition.prism_jitter = get_as<double>(v, k); }},
        {"beta_prior_var", [&](const Json& v, const std::string& k) { c.priors.beta_prior_var = get_as<double>(v, k); }},
        {"hyper_prior_mean", [&](const Json& v, const std::string& k) { c.priors.hyper_prior_mean = detail::get_array<4>(v, k); }},
        {"hyper_prior_sd", [&](const Json& v, const std::string& k) { c.priors.hyper_prior_sd = detail::get_array<4>(v, k); }},
        {"fixed_log_zeta",
         [&](const Json& v, const std::string& k) {
             if (v.is_null()) c.priors.fixed_log_zeta.reset();
             else c.priors.fixed_log_zeta = get_as<double>(v, k);
         }},
        {"max_iter", [&](const Json& v, const std::string& k) { c.inference.max_iter = get_as<int>(v, k); }},
        {"grad_step", [&](const Json& v, const std::string& k) { c.inference.grad_step = get_as<double>(v, k); }},
        {"hessian_step", [&](const Json& v, const std::string& k) { c.inference.hessian_step = get_as<double>(v, k); }},
        {"start", [&](const Json& v, const std::string& k) { c.start = HyperParams::from_array(detail::get_array<4>(v, k)); }},
        {"fixed_hyperparameters", [&](const Json& v, const std::string& k) { c.fixed_hyperparameters = get_as<bool>(v, k); }},
        {"n_is", [&](const Json& v, const std::string& k) { c.inference.n_is = get_as<int>(v, k); }},
        {"seed", [&](const Json& v, const std::string& k) { c.seed = get_as<std::uint64_t>(v, k); }},
        {"low_memory", [&](const Json& v, const std::string& k) { c.inference.low_memory = get_as<bool>(v, k); }},
        {"include_residual_variance",
         [&](const Json& v, const std::string& k) { c.inference.include_residual_variance = get_as<bool>(v, k); }},
        {"threads", [&](const Json& v, const std::string& k) { c.threads = get_as<int>(v, k); }},
        {"train", [&](const Json& v, const std::string& k) { c.train = get_as<std::string>(v, k); }},
        {"predict_at", [&](const Json& v, const std::string& k) { c.predict_at = get_as<std::string>(v, k); }},
        {"truth", [&](const Json& v, const std::string& k) { c.truth = get_as<std::string>(v, k); }},
        {"sim_n", [&](const Json& v, const std::string& k) { c.sim_n = get_as<std::size_t>(v, k); }},
        {"sim_days", [&](const Json& v, const std::string& k) { c.sim_days = get_as<int>(v, k); }},
        {"sim_lon", [&](const Json& v, const std::string& k) { c.sim_lon = detail::get_array<2>(v, k); }},
        {"sim_lat", [&](const Json& v, const std::string& k) { c.sim_lat = detail::get_array<2>(v, k); }},
        {"sim_holdout_lon", [&](const Json& v, const std::string& k) { c.sim_holdout_lon = detail::get_array<2>(v, k); }},
        {"sim_holdout_lat", [&](const Json& v, const std::string& k) { c.sim_holdout_lat = detail::get_array<2>(v, k); }},
        {"sim_sigma", [&](const Json& v, const std::string& k) { c.sim_sigma = get_as<double>(v, k); }},
        {"sim_rho", [&](const Json& v, const std::string& k) { c.sim_rho = get_as<double>(v, k); }},
        {"sim_phi", [&](const Json& v, const std::string& k) { c.sim_phi = get_as<double>(v, k); }},
        {"sim_zeta", [&](const Json& v, const std::string& k) { c.sim_zeta = get_as<double>(v, k); }},
        {"sim_beta", [&](const Json& v, const std::string& k) { c.sim_beta = get_as<std::vector<double>>(v, k); }},
    };
    for (const auto& [key, value] : j.items()) {
        const auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
        if (value.is_object()) throw ConfigError("config key '" + key + "' must not be nested");
        it->second(value, key);
    }
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open config");
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return parse_config(j);
}

/// Flat-key echo of a configuration; parsing it back gives the same settings.
inline Json config_echo(const RunConfig& c) {
    Json j;
    j["lon_column"] = c.schema.lon;
    j["lat_column"] = c.schema.lat;
    j["time_column"] = c.schema.time;
    j["time_format"] = c.schema.time_format == TimeFormat::Date ? "date" : "day";
    j["response_column"] = c.schema.response;
    std::vector<std::string> covs;
    for (const auto& cv : c.schema.covariates) covs.push_back(cv.categorical ? cv.name + ":categorical:" + cv.reference : cv.name);
    j["covariates"] = covs;
    j["intercept"] = c.schema.intercept;
    j["n_lon_splits"] = c.partition.n_lon_splits;
    j["n_lat_splits"] = c.partition.n_lat_splits;
    j["n_time_splits"] = c.partition.n_time_splits;
    j["M0"] = c.partition.M0;
    j["J"] = c.partition.J;
    j["thinning_rate"] = c.partition.thinning_rate;
    j["knot_budget"] = c.partition.budget_mode == KnotBudgetMode::PerRegion ? "per_region" : "level_total";
    j["knots_per_region"] = c.partition.knots_per_region;
    j["knot_placement"] = c.partition.placement == KnotPlacement::UniformRandom ? "uniform_random" : "prism";
    j["prism_span"] = c.partition.prism_span;
    j["prism_jitter"] = c.partition.prism_jitter;
    j["beta_prior_var"] = c.priors.beta_prior_var;
    j["hyper_prior_mean"] = c.priors.hyper_prior_mean;
    j["hyper_prior_sd"] = c.priors.hyper_prior_sd;
    j["fixed_log_zeta"] = c.priors.fixed_log_zeta ? Json(*c.priors.fixed_log_zeta) : Json(nullptr);
    j["max_iter"] = c.inference.max_iter;
    j["grad_step"] = c.inference.grad_step;
    j["hessian_step"] = c.inference.hessian_step;
    if (c.start) j["start"] = c.start->as_array();
    j["fixed_hyperparameters"] = c.fixed_hyperparameters;
    j["n_is"] = c.inference.n_is;
    if (c.seed) j["seed"] = *c.seed;
    j["low_memory"] = c.inference.low_memory;
    j["include_residual_variance"] = c.inference.include_residual_variance;
    j["threads"] = c.threads;
    j["sim_n"] = c.sim_n;
    j["sim_days"] = c.sim_days;
    j["sim_lon"] = c.sim_lon;
    j["sim_lat"] = c.sim_lat;
    j["sim_holdout_lon"] = c.sim_holdout_lon;
    j["sim_holdout_lat"] = c.sim_holdout_lat;
    j["sim_sigma"] = c.sim_sigma;
    j["sim_rho"] = c.sim_rho;
    j["sim_phi"] = c.sim_phi;
    j["sim_zeta"] = c.sim_zeta;
    j["sim_beta"] = c.sim_beta;
    return j;
}

// ---------------------------------------------------------------------------
// metrics

struct Metrics {
    double mspe = 0.0;
    double medspe = 0.0;
    double coverage = 0.0;
    std::size_t n = 0;
};

inline Metrics compute_metrics(const Eigen::VectorXd& mean, const Eigen::VectorXd& ci_low, const Eigen::VectorXd& ci_high,
                               const Eigen::VectorXd& truth) {
    const auto n = truth.size();
    if (mean.size() != n || ci_low.size() != n || ci_high.size() != n) throw DataError("metrics: length mismatch");
    if (n == 0) throw DataError("metrics: no rows");
    std::vector<double> se(static_cast<std::size_t>(n));
    Metrics m;
    m.n = static_cast<std::size_t>(n);
    std::size_t inside = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double e = mean[i] - truth[i];
        se[static_cast<std::size_t>(i)] = e * e;
        m.mspe += e * e;
        if (truth[i] >= ci_low[i] && truth[i] <= ci_high[i]) ++inside;
    }
    m.mspe /= static_cast<double>(n);
    std::sort(se.begin(), se.end());
    const std::size_t h = se.size() / 2;
    m.medspe = se.size() % 2 ? se[h] : 0.5 * (se[h - 1] + se[h]);
    m.coverage = static_cast<double>(inside) / static_cast<double>(n);
    return m;
}

// ---------------------------------------------------------------------------
// simulation

struct SimulatedData {
    std::vector<SpatioTemporalPoint> points;
    Eigen::MatrixXd covariates;  ///< simulated covariate columns, without the intercept
    Eigen::VectorXd y;
    std::vector<bool> holdout;   ///< inside the central block
};

/// Points uniform in the box over sim_days days, one standard-normal covariate
/// per extra entry of sim_beta, and a response drawn from the dense model.
inline SimulatedData simulate_dataset(const RunConfig& c, std::uint64_t seed) {
    SimulatedData s;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ulon(c.sim_lon[0], c.sim_lon[1]), ulat(c.sim_lat[0], c.sim_lat[1]);
    std::uniform_int_distribution<int> uday(0, c.sim_days - 1);
    std::normal_distribution<double> z(0.0, 1.0);
    const auto n = static_cast<Eigen::Index>(c.sim_n);
    const auto p = static_cast<Eigen::Index>(c.sim_beta.size());
    s.covariates.resize(n, p - 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double lon = ulon(rng), lat = ulat(rng);
        s.points.push_back({lon, lat, uday(rng)});
        for (Eigen::Index k = 0; k + 1 < p; ++k) s.covariates(i, k) = z(rng);
        s.holdout.push_back(lon >= c.sim_holdout_lon[0] && lon <= c.sim_holdout_lon[1] && lat >= c.sim_holdout_lat[0] &&
                            lat <= c.sim_holdout_lat[1]);
    }
    Eigen::MatrixXd X(n, p);
    X.col(0).setOnes();
    X.rightCols(p - 1) = s.covariates;
    const oracle::DenseGP gp{s.points, X, c.truth_psi()};
    s.y = oracle::simulate(gp, Eigen::Map<const Eigen::VectorXd>(c.sim_beta.data(), p), rng());
    return s;
}

inline void write_simulated_csv(const std::string& path, const SimulatedData& s, bool holdout_rows) {
    std::ofstream out(path);
    if (!out) throw DataError(path + ": cannot write");
    out << "lon,lat,day,y";
    for (Eigen::Index k = 0; k < s.covariates.cols(); ++k) out << ",x" << k + 1;
    out << '\n';
    for (std::size_t i = 0; i < s.points.size(); ++i) {
        if (s.holdout[i] != holdout_rows) continue;
        const auto& pt = s.points[i];
        out << format_double(pt.lon) << ',' << format_double(pt.lat) << ',' << pt.time << ','
            << format_double(s.y[static_cast<Eigen::Index>(i)]);
        for (Eigen::Index k = 0; k < s.covariates.cols(); ++k) out << ',' << format_double(s.covariates(static_cast<Eigen::Index>(i), k));
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// fitting

struct StageTimer {
    Json timings = Json::object();
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    void lap(const std::string& stage) {
        const auto t1 = std::chrono::steady_clock::now();
        timings[stage] = std::chrono::duration<double>(t1 - t0).count();
        t0 = t1;
    }
};

struct PredictionTable {
    std::vector<SpatioTemporalPoint> points;
    std::vector<std::string> time_tokens;
    PredictionResult result;
};

struct FitReport {
    std::shared_ptr<const RegionTree> tree;
    std::unique_ptr<MraModel> model;
    ModeResult mode;
    std::optional<Proposal> proposal;
    ISResult samples;
    MarginalReport marginals;
    std::optional<PredictionTable> predictions;
    std::optional<Metrics> metrics;
    Json manifest;
    Json timings;
};

/// Surfaces an error with the pipeline stage it came from.
template <class Fn>
auto staged(const char* stage, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string(stage) + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(std::string(stage) + ": " + e.what());
    } catch (const NumericError& e) {
        throw NumericError(std::string(stage) + ": " + e.what());
    }
}

/// Partition, knots, mode search, proposal, importance sampling, summaries and
/// (when `pred` is given) prediction.
inline FitReport fit_predict(const RunConfig& cfg, const Dataset& train, const Dataset* pred = nullptr) {
    cfg.validate();
    const std::uint64_t seed = cfg.require_seed();
    if (!train.has_response()) throw DataError("training data has no response");
    set_thread_budget(cfg.threads);
    FitReport rep;
    StageTimer timer;

    const std::vector<SpatioTemporalPoint> no_points;
    const auto& pred_pts = pred ? pred->points : no_points;
    rep.tree = staged("partition", [&] {
        auto tree = build_tree(train.points, cfg.partition, pred_pts);
        place_knots(tree, pred_pts, cfg.partition, seed);
        return std::make_shared<const RegionTree>(std::move(tree));
    });
    rep.model = staged("model", [&] {
        return std::make_unique<MraModel>(rep.tree, ModelData{train.points, train.X, train.y}, cfg.priors);
    });
    const MraModel& model = *rep.model;
    timer.lap("setup");

    InferenceOptions opt = cfg.inference;
    opt.seed = seed;
    if (cfg.fixed_hyperparameters) {
        HyperParams psi = *cfg.start;
        if (cfg.priors.fixed_log_zeta) psi.log_zeta = *cfg.priors.fixed_log_zeta;
        rep.samples = staged("evaluate", [&] { return fixed_hyperparameters(model, psi); });
        rep.mode.psi = psi;
        rep.mode.x = free_coordinates(psi, cfg.priors);
        rep.mode.log_posterior = rep.samples.log_c;
        rep.mode.converged = true;
        timer.lap("evaluate");
    } else {
        rep.mode = staged("mode search", [&] { return find_mode(model, cfg.start, opt); });
        timer.lap("mode_search");
        rep.proposal = staged("proposal", [&] { return build_proposal(model, rep.mode.psi, opt); });
        timer.lap("proposal");
        rep.samples = staged("importance sampling", [&] { return importance_sample(model, *rep.proposal, opt); });
        timer.lap("importance_sampling");
    }
    rep.marginals = staged("summaries", [&] { return marginal_summaries(model, rep.samples, train.column_names); });
    timer.lap("summaries");

    if (pred) {
        if (pred->column_names != train.column_names) throw DataError("prediction covariates differ from training");
        PredictionTable tab{pred->points, pred->time_tokens, {}};
        tab.result = staged("prediction", [&] { return predict(model, rep.samples, pred->points, pred->X, opt); });
        rep.predictions = std::move(tab);
        timer.lap("prediction");
        if (pred->has_response()) {
            rep.metrics = compute_metrics(rep.predictions->result.mean, rep.predictions->result.ci_low,
                                          rep.predictions->result.ci_high, pred->y);
        }
    }

    Json& m = rep.manifest;
    m["command"] = "fit";
    m["config"] = config_echo(cfg);
    m["seed"] = seed;
    m["threads"] = thread_budget();
    m["n_train"] = train.size();
    m["n_predict"] = pred ? pred->size() : 0;
    m["covariates"] = train.column_names;
    Json centers = Json::object();
    for (const auto& [k, v] : train.encoding.centers) centers[k] = v;
    m["centering"] = centers;
    m["date_origin_days"] = train.encoding.date_origin;
    m["resolutions"] = rep.tree->K + 1;
    m["n_regions"] = rep.tree->regions.size();
    m["n_knots"] = model.n_knots();
    m["q_dim"] = model.dim();
    m["q_nonzeros"] = model.q_pattern().nnz_full();
    m["l_nonzeros"] = model.symbolic()->L_row_idx.size();
    Json mode;
    mode["log_hyperparameters"] = rep.mode.psi.as_array();
    mode["log_posterior"] = rep.mode.log_posterior;
    mode["iterations"] = rep.mode.iterations;
    mode["evaluations"] = rep.mode.evaluations;
    mode["converged"] = rep.mode.converged;
    m["mode"] = mode;
    if (rep.proposal) {
        std::vector<std::vector<double>> cov;
        for (Eigen::Index i = 0; i < rep.proposal->cov.rows(); ++i) {
            cov.emplace_back();
            for (Eigen::Index k = 0; k < rep.proposal->cov.cols(); ++k) cov.back().push_back(rep.proposal->cov(i, k));
        }
        m["proposal_covariance"] = cov;
        m["proposal_regularized"] = rep.proposal->regularized;
    }
    Json is;
    is["n_is"] = rep.samples.samples.size();
    is["ess"] = rep.samples.ess;
    is["log_c"] = rep.samples.log_c;
    is["failed_draws"] = rep.samples.failed;
    is["degenerate_weights"] = rep.samples.degenerate;
    m["importance_sampling"] = is;
    if (rep.metrics) m["metrics"] = {{"mspe", rep.metrics->mspe}, {"medspe", rep.metrics->medspe}, {"coverage", rep.metrics->coverage}};
    rep.timings = timer.timings;
    return rep;
}

// ---------------------------------------------------------------------------
// output tables

inline std::ofstream open_output(const std::filesystem::path& p) {
    std::ofstream out(p);
    if (!out) throw DataError(p.string() + ": cannot write");
    return out;
}

inline void write_predictions(const std::filesystem::path& p, const std::vector<SpatioTemporalPoint>& pts,
                              const std::vector<std::string>& time_tokens, const PredictionResult& r) {
    auto out = open_output(p);
    out << "lon,lat,time,mean,sd,ci_low,ci_high,ci_method\n";
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        out << format_double(pts[i].lon) << ',' << format_double(pts[i].lat) << ','
            << (i < time_tokens.size() ? time_tokens[i] : std::to_string(pts[i].time)) << ',' << format_double(r.mean[k])
            << ',' << format_double(r.sd[k]) << ',' << format_double(r.ci_low[k]) << ',' << format_double(r.ci_high[k])
            << ',' << to_string(r.method[i]) << '\n';
    }
}

inline void write_summaries(const std::filesystem::path& p, const std::vector<NamedSummary>& rows) {
    auto out = open_output(p);
    out << "name,mean,sd,skewness,ci_low,ci_high,ci_method\n";
    for (const auto& r : rows) {
        const auto& s = r.summary;
        out << r.name << ',' << format_double(s.mean) << ',' << format_double(s.sd) << ',' << format_double(s.skewness)
            << ',' << format_double(s.ci_low) << ',' << format_double(s.ci_high) << ',' << to_string(s.method) << '\n';
    }
}

inline void write_metrics(const std::filesystem::path& p, const Metrics& m) {
    auto out = open_output(p);
    out << "n,mspe,medspe,coverage\n"
        << m.n << ',' << format_double(m.mspe) << ',' << format_double(m.medspe) << ',' << format_double(m.coverage) << '\n';
}

inline void write_json(const std::filesystem::path& p, const Json& j) {
    auto out = open_output(p);
    out << j.dump(2) << '\n';
}

/// Writes the report tables; run times go to timings.json so that every other
/// file is reproducible byte for byte.
inline void write_fit_report(const std::filesystem::path& dir, const FitReport& rep) {
    std::filesystem::create_directories(dir);
    write_summaries(dir / "fixed_effects.csv", rep.marginals.fixed);
    write_summaries(dir / "hyperparameters.csv", rep.marginals.hyper);
    if (rep.predictions) write_predictions(dir / "predictions.csv", rep.predictions->points, rep.predictions->time_tokens, rep.predictions->result);
    if (rep.metrics) write_metrics(dir / "metrics.csv", *rep.metrics);
    write_json(dir / "manifest.json", rep.manifest);
    write_json(dir / "timings.json", rep.timings);
}

/// Dense kriging at fixed hyperparameters with the same output layout as `fit`.
inline PredictionResult oracle_predict(const Dataset& train, const Dataset& pred, const HyperParams& psi, const PriorSpec& priors) {
    if (pred.column_names != train.column_names) throw DataError("prediction covariates differ from training");
    const oracle::DenseGP gp{train.points, train.X, psi};
    const auto d = oracle::dense_predict(gp, train.y, pred.points, pred.X, priors);
    PredictionResult r;
    const auto n = d.mean.size();
    r.mean = d.mean;
    r.sd = d.var.cwiseMax(0.0).cwiseSqrt();
    r.ci_low.resize(n);
    r.ci_high.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto s = summarize({r.mean[k], r.sd[k], 0.0}, [](double) { return 0.0; });
        r.ci_low[k] = s.ci_low;
        r.ci_high[k] = s.ci_high;
        r.method.push_back(s.method);
    }
    return r;
}

}  // namespace ismra
