#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ismra/ismra.hpp"

namespace fs = std::filesystem;
using namespace ismra;

namespace {

struct Flags {
    std::string config;
    std::string train;
    std::string predict_at;
    std::string truth;
    std::string predictions;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string tree_report;
    std::string q_pattern;
};

RunConfig resolve(const Flags& f) {
    RunConfig cfg = f.config.empty() ? RunConfig{} : load_config(f.config);
    if (!f.train.empty()) cfg.train = f.train;
    if (!f.predict_at.empty()) cfg.predict_at = f.predict_at;
    if (!f.truth.empty()) cfg.truth = f.truth;
    if (f.seed) cfg.seed = *f.seed;
    if (f.threads) cfg.threads = *f.threads;
    cfg.validate();
    set_thread_budget(cfg.threads);
    return cfg;
}

/// Prediction rows plus, when a truth file is given, its responses in the same order.
Dataset load_prediction_rows(const RunConfig& cfg, const Dataset& train) {
    Dataset pred = ingest_csv(cfg.predict_at, cfg.schema, &train.encoding);
    if (!cfg.truth.empty()) {
        const Dataset truth = ingest_csv(cfg.truth, cfg.schema, &train.encoding);
        if (!truth.has_response()) throw DataError(cfg.truth + ": truth file has no response values");
        if (truth.points != pred.points) throw DataError(cfg.truth + ": rows do not line up with " + cfg.predict_at);
        pred.y = truth.y;
    }
    return pred;
}

void require(const std::string& value, const char* what) {
    if (value.empty()) throw ConfigError(std::string("missing ") + what);
}

int cmd_fit(const Flags& f) {
    const RunConfig cfg = resolve(f);
    require(cfg.train, "training file (--train)");
    const Dataset train = ingest_csv(cfg.train, cfg.schema);
    std::optional<Dataset> pred;
    if (!cfg.predict_at.empty()) pred = load_prediction_rows(cfg, train);
    const FitReport rep = fit_predict(cfg, train, pred ? &*pred : nullptr);
    write_fit_report(f.out_dir, rep);
    if (!f.tree_report.empty()) {
        std::ofstream os(f.tree_report);
        if (!os) throw DataError(f.tree_report + ": cannot write");
        write_tree_report(os, *rep.tree);
    }
    if (!f.q_pattern.empty()) {
        std::ofstream os(f.q_pattern);
        if (!os) throw DataError(f.q_pattern + ": cannot write");
        write_pattern(os, rep.model->q_pattern());
    }
    if (rep.samples.degenerate) {
        std::cerr << "warning: importance weights are degenerate (ESS " << rep.samples.ess << " of "
                  << rep.samples.samples.size() << ")\n";
    }
    if (rep.metrics) {
        std::cout << "mspe " << format_double(rep.metrics->mspe) << " medspe " << format_double(rep.metrics->medspe)
                  << " coverage " << format_double(rep.metrics->coverage) << '\n';
    }
    return 0;
}

int cmd_simulate(const Flags& f) {
    const RunConfig cfg = resolve(f);
    const std::uint64_t seed = cfg.require_seed();
    const SimulatedData sim = simulate_dataset(cfg, seed);
    fs::create_directories(f.out_dir);
    write_simulated_csv((fs::path(f.out_dir) / "train.csv").string(), sim, false);
    write_simulated_csv((fs::path(f.out_dir) / "test.csv").string(), sim, true);
    Json m;
    m["command"] = "simulate";
    m["config"] = config_echo(cfg);
    m["seed"] = seed;
    m["n_train"] = std::count(sim.holdout.begin(), sim.holdout.end(), false);
    m["n_test"] = std::count(sim.holdout.begin(), sim.holdout.end(), true);
    write_json(fs::path(f.out_dir) / "manifest.json", m);
    return 0;
}

int cmd_oracle_predict(const Flags& f) {
    const RunConfig cfg = resolve(f);
    require(cfg.train, "training file (--train)");
    require(cfg.predict_at, "prediction file (--predict-at)");
    const Dataset train = ingest_csv(cfg.train, cfg.schema);
    if (!train.has_response()) throw DataError(cfg.train + ": no response values");
    const Dataset pred = load_prediction_rows(cfg, train);
    const HyperParams psi = cfg.start ? *cfg.start : cfg.truth_psi();
    const PredictionResult r = oracle_predict(train, pred, psi, cfg.priors);
    fs::create_directories(f.out_dir);
    write_predictions(fs::path(f.out_dir) / "predictions.csv", pred.points, pred.time_tokens, r);
    Json m;
    m["command"] = "oracle-predict";
    m["config"] = config_echo(cfg);
    m["log_hyperparameters"] = psi.as_array();
    m["n_train"] = train.size();
    m["n_predict"] = pred.size();
    if (pred.has_response()) {
        const Metrics mt = compute_metrics(r.mean, r.ci_low, r.ci_high, pred.y);
        write_metrics(fs::path(f.out_dir) / "metrics.csv", mt);
        m["metrics"] = {{"mspe", mt.mspe}, {"medspe", mt.medspe}, {"coverage", mt.coverage}};
    }
    write_json(fs::path(f.out_dir) / "manifest.json", m);
    return 0;
}

int cmd_metrics(const Flags& f) {
    const RunConfig cfg = resolve(f);
    require(f.predictions, "predictions file (--predictions)");
    require(cfg.truth, "truth file (--truth)");
    const CsvTable t = read_csv(f.predictions);
    const std::size_t c_mean = t.require("mean"), c_lo = t.require("ci_low"), c_hi = t.require("ci_high");
    const auto n = static_cast<Eigen::Index>(t.rows.size());
    Eigen::VectorXd mean(n), lo(n), hi(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(i);
        mean[i] = t.number(r, c_mean);
        lo[i] = t.number(r, c_lo);
        hi[i] = t.number(r, c_hi);
    }
    const CsvTable truth_table = read_csv(cfg.truth);
    const std::size_t c_y = truth_table.require(cfg.schema.response);
    Eigen::VectorXd truth(static_cast<Eigen::Index>(truth_table.rows.size()));
    for (Eigen::Index i = 0; i < truth.size(); ++i) truth[i] = truth_table.number(static_cast<std::size_t>(i), c_y);
    const Metrics m = compute_metrics(mean, lo, hi, truth);
    if (!f.out_dir.empty()) {
        fs::create_directories(f.out_dir);
        write_metrics(fs::path(f.out_dir) / "metrics.csv", m);
    }
    std::cout << "n " << m.n << " mspe " << format_double(m.mspe) << " medspe " << format_double(m.medspe)
              << " coverage " << format_double(m.coverage) << '\n';
    return 0;
}

int exit_code(const Error& e) {
    switch (e.kind()) {
        case ErrorKind::Config: return 2;
        case ErrorKind::Data: return 3;
        case ErrorKind::Numeric: return 4;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spatiotemporal Gaussian-process inference with the multi-resolution approximation"};
    app.require_subcommand(1);
    Flags f;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", f.config, "JSON config with flat keys");
        sub->add_option("--seed", f.seed, "random seed (overrides the config)");
        sub->add_option("--threads", f.threads, "thread budget, 0 = all cores");
    };
    auto* fit = app.add_subcommand("fit", "fit the model and optionally predict");
    common(fit);
    fit->add_option("--train", f.train, "training CSV");
    fit->add_option("--predict-at", f.predict_at, "prediction locations CSV");
    fit->add_option("--truth", f.truth, "held-out responses aligned with --predict-at");
    fit->add_option("--out-dir", f.out_dir, "output directory")->required();
    fit->add_option("--tree-report", f.tree_report, "write the region tree summary here");
    fit->add_option("--dump-q-pattern", f.q_pattern, "write the sparsity pattern of Q here");

    auto* sim = app.add_subcommand("simulate", "simulate training and held-out block CSVs");
    common(sim);
    sim->add_option("--out-dir", f.out_dir, "output directory")->required();

    auto* orc = app.add_subcommand("oracle-predict", "dense kriging at fixed hyperparameters");
    common(orc);
    orc->add_option("--train", f.train, "training CSV");
    orc->add_option("--predict-at", f.predict_at, "prediction locations CSV");
    orc->add_option("--truth", f.truth, "held-out responses aligned with --predict-at");
    orc->add_option("--out-dir", f.out_dir, "output directory")->required();

    auto* met = app.add_subcommand("metrics", "MSPE, MedSPE and coverage of a predictions file");
    common(met);
    met->add_option("--predictions", f.predictions, "predictions.csv from fit or oracle-predict")->required();
    met->add_option("--truth", f.truth, "CSV with the true responses in the same row order")->required();
    met->add_option("--out-dir", f.out_dir, "optional directory for metrics.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*fit) return cmd_fit(f);
        if (*sim) return cmd_simulate(f);
        if (*orc) return cmd_oracle_predict(f);
        if (*met) return cmd_metrics(f);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
