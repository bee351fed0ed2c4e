#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "ismra/harness.hpp"

using namespace ismra;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "ismra_harness_tests";
    fs::create_directories(dir);
    return dir / name;
}

std::string write_file(const std::string& name, const std::string& body) {
    const auto p = scratch(name);
    std::ofstream(p) << body;
    return p.string();
}

}  // namespace

TEST(Ingest, ContinuousCovariateCentered) {
    const auto path = write_file("three.csv", "lon,lat,day,y,elev\n73.1,18.5,0,30.1,10\n73.2,18.6,1,29.5,20\n73.3,18.7,2,31.0,60\n");
    Schema s;
    s.covariates = {CovariateSpec::parse("elev")};
    const Dataset d = ingest_csv(path, s);
    ASSERT_EQ(d.X.cols(), 2);
    EXPECT_EQ(d.column_names[1], "elev");
    EXPECT_NEAR(d.X.col(1).mean(), 0.0, 1e-14);
    EXPECT_DOUBLE_EQ(d.encoding.centers.at("elev"), 30.0);
    EXPECT_EQ(d.points[2].time, 2);
    EXPECT_DOUBLE_EQ(d.y[1], 29.5);

    // prediction rows reuse the training centre
    const auto pp = write_file("three_pred.csv", "lon,lat,day,elev\n73.15,18.55,1,40\n");
    const Dataset p = ingest_csv(pp, s, &d.encoding);
    EXPECT_FALSE(p.has_response());
    EXPECT_DOUBLE_EQ(p.X(0, 1), 10.0);
}

TEST(Ingest, CategoricalDummies) {
    const auto path = write_file("cat.csv",
                                 "lon,lat,day,y,cover\n73.1,18.5,0,1,forest\n73.2,18.6,0,2,urban\n73.3,18.7,1,3,water\n"
                                 "73.4,18.8,1,4,forest\n");
    Schema s;
    s.covariates = {CovariateSpec::parse("cover:categorical:forest")};
    const Dataset d = ingest_csv(path, s);
    ASSERT_EQ(d.X.cols(), 3);
    EXPECT_EQ(d.column_names[1], "cover=urban");
    EXPECT_EQ(d.column_names[2], "cover=water");
    EXPECT_EQ(d.X.col(1).sum(), 1.0);
    EXPECT_EQ(d.X(2, 2), 1.0);
    EXPECT_EQ(d.X.row(0).tail(2).sum(), 0.0);

    const auto bad = write_file("cat_pred.csv", "lon,lat,day,cover\n73.1,18.5,0,desert\n");
    EXPECT_THROW(ingest_csv(bad, s, &d.encoding), DataError);
}

TEST(Ingest, MalformedRowNamesRow) {
    const auto path = write_file("bad.csv", "lon,lat,day,y\n73.1,18.5,0,1\n73.2,abc,0,2\n");
    try {
        ingest_csv(path, Schema{});
        FAIL() << "expected a data error";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("'lat'"), std::string::npos) << e.what();
    }
    EXPECT_THROW(ingest_csv(write_file("short.csv", "lon,lat,day,y\n73.1,18.5,0\n"), Schema{}), DataError);
    EXPECT_THROW(ingest_csv(write_file("empty.csv", ""), Schema{}), DataError);
    EXPECT_THROW(ingest_csv(write_file("missing.csv", "lon,lat,day,y\n73.1,18.5,0,\n"), Schema{}), DataError);
    EXPECT_THROW(ingest_csv(write_file("nan.csv", "lon,lat,day,y\n73.1,18.5,0,nan\n"), Schema{}), DataError);
    EXPECT_THROW(ingest_csv(scratch("does_not_exist.csv").string(), Schema{}), DataError);
}

TEST(Ingest, DatesCountFromEarliest) {
    const auto path = write_file("dates.csv", "lon,lat,date,y\n73.1,18.5,2016-03-02,1\n73.2,18.6,2016-02-28,2\n");
    Schema s;
    s.time = "date";
    s.time_format = TimeFormat::Date;
    const Dataset d = ingest_csv(path, s);
    EXPECT_EQ(d.points[1].time, 0);
    EXPECT_EQ(d.points[0].time, 3);  // leap year
    EXPECT_EQ(d.time_tokens[0], "2016-03-02");
    EXPECT_THROW(ingest_csv(write_file("baddate.csv", "lon,lat,date,y\n73.1,18.5,2016-02-30,1\n"), s), DataError);
}

TEST(Config, FlatKeysAndEcho) {
    const Json j = Json::parse(R"({"seed": 3, "n_lon_splits": 6, "n_lat_splits": 5, "n_time_splits": 1, "covariates": ["elev", "cover:categorical:forest"],
                                   "fixed_log_zeta": null, "start": [1, 2, 1, -1], "knot_placement": "uniform_random"})");
    const RunConfig c = parse_config(j);
    EXPECT_EQ(c.partition.K(), 12);
    EXPECT_EQ(*c.seed, 3u);
    EXPECT_FALSE(c.priors.fixed_log_zeta);
    EXPECT_EQ(c.schema.covariates[1].reference, "forest");
    EXPECT_EQ(c.partition.placement, KnotPlacement::UniformRandom);
    const RunConfig back = parse_config(config_echo(c));
    EXPECT_EQ(config_echo(back).dump(), config_echo(c).dump());
}

TEST(Config, Errors) {
    EXPECT_THROW(parse_config(Json::parse(R"({"sede": 3})")), ConfigError);
    EXPECT_THROW(parse_config(Json::parse(R"({"n_is": "many"})")), ConfigError);
    EXPECT_THROW(parse_config(Json::parse(R"({"partition": {"M0": 3}})")), ConfigError);
    EXPECT_THROW(parse_config(Json::parse(R"({"start": [1, 2]})")), ConfigError);
    RunConfig c;
    EXPECT_THROW(c.require_seed(), ConfigError);
    c.inference.n_is = 1;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(load_config(scratch("nope.json").string()), ConfigError);
}

TEST(MetricsTest, Examples) {
    const Eigen::Vector2d truth(0.0, 0.0);
    const Eigen::Vector2d wide(-10.0, -10.0), high(10.0, 10.0);
    const auto a = compute_metrics(Eigen::Vector2d(1.0, -1.0), wide, high, truth);
    EXPECT_DOUBLE_EQ(a.mspe, 1.0);
    EXPECT_DOUBLE_EQ(a.medspe, 1.0);
    EXPECT_DOUBLE_EQ(a.coverage, 1.0);
    const auto b = compute_metrics(Eigen::Vector3d(0.0, 0.0, 3.0), Eigen::Vector3d::Constant(-1.0), Eigen::Vector3d::Constant(1.0),
                                   Eigen::Vector3d::Zero());
    EXPECT_DOUBLE_EQ(b.mspe, 3.0);
    EXPECT_DOUBLE_EQ(b.medspe, 0.0);
    EXPECT_THROW(compute_metrics(Eigen::Vector2d::Zero(), wide, high, Eigen::Vector3d::Zero()), DataError);
}

TEST(Simulation, HoldoutBlockAndReproducibility) {
    RunConfig c;
    c.sim_n = 400;
    const auto a = simulate_dataset(c, 5);
    const auto b = simulate_dataset(c, 5);
    EXPECT_EQ(a.y, b.y);
    std::size_t held = 0;
    for (std::size_t i = 0; i < a.points.size(); ++i) {
        const auto& p = a.points[i];
        const bool inside = p.lon >= 73.25 && p.lon <= 73.35 && p.lat >= 18.55 && p.lat <= 18.65;
        EXPECT_EQ(a.holdout[i], inside);
        held += inside;
    }
    EXPECT_GT(held, 0u);
    write_simulated_csv(scratch("sim_test.csv").string(), a, true);
    const Dataset d = ingest_csv(scratch("sim_test.csv").string(), Schema{});
    EXPECT_EQ(d.size(), held);
}

TEST(Simulation, NoFieldNoNoiseGivesFixedEffects) {
    RunConfig c;
    c.sim_n = 50;
    c.sim_sigma = 0.0;
    c.sim_zeta = 0.0;
    const auto s = simulate_dataset(c, 2);
    for (Eigen::Index i = 0; i < 50; ++i) EXPECT_DOUBLE_EQ(s.y[i], 30.0 + 1.0 * s.covariates(i, 0));
}

TEST(Fit, FitOnlyAndWithPrediction) {
    RunConfig c;
    c.sim_n = 250;
    c.seed = 4;
    c.schema.covariates = {CovariateSpec::parse("x1")};
    c.partition.M0 = 8;
    c.inference.max_iter = 3;
    c.inference.n_is = 5;
    const auto sim = simulate_dataset(c, 4);
    write_simulated_csv(scratch("fit_train.csv").string(), sim, false);
    write_simulated_csv(scratch("fit_test.csv").string(), sim, true);
    const Dataset train = ingest_csv(scratch("fit_train.csv").string(), c.schema);
    const Dataset test = ingest_csv(scratch("fit_test.csv").string(), c.schema, &train.encoding);

    const FitReport only = fit_predict(c, train);
    EXPECT_FALSE(only.predictions);
    EXPECT_EQ(only.marginals.fixed.size(), 2u);
    EXPECT_EQ(only.marginals.hyper.size(), 6u);

    const FitReport full = fit_predict(c, train, &test);
    ASSERT_TRUE(full.predictions);
    ASSERT_TRUE(full.metrics);
    EXPECT_TRUE(std::isfinite(full.metrics->mspe));
    for (Eigen::Index k = 0; k < full.predictions->result.mean.size(); ++k) {
        EXPECT_LT(full.predictions->result.ci_low[k], full.predictions->result.ci_high[k]);
    }
    const fs::path dir = scratch("fit_out");
    write_fit_report(dir, full);
    for (const char* f : {"predictions.csv", "fixed_effects.csv", "hyperparameters.csv", "metrics.csv", "manifest.json", "timings.json"}) {
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    }
    EXPECT_EQ(read_csv((dir / "predictions.csv").string()).rows.size(), test.size());

    c.seed.reset();
    EXPECT_THROW(fit_predict(c, train), ConfigError);
}

TEST(Fit, FixedHyperparametersMatchOracle) {
    RunConfig c;
    c.sim_n = 120;
    c.seed = 1;
    c.partition.n_lon_splits = 0;
    c.partition.n_lat_splits = 0;
    c.priors.fixed_log_zeta.reset();
    c.start = c.truth_psi();
    c.fixed_hyperparameters = true;
    const auto sim = simulate_dataset(c, 8);
    write_simulated_csv(scratch("fx_train.csv").string(), sim, false);
    write_simulated_csv(scratch("fx_test.csv").string(), sim, true);
    const Dataset train = ingest_csv(scratch("fx_train.csv").string(), c.schema);
    const Dataset test = ingest_csv(scratch("fx_test.csv").string(), c.schema, &train.encoding);
    const FitReport rep = fit_predict(c, train, &test);
    const PredictionResult dense = oracle_predict(train, test, c.truth_psi(), c.priors);
    for (Eigen::Index k = 0; k < dense.mean.size(); ++k) {
        EXPECT_NEAR(rep.predictions->result.mean[k], dense.mean[k], 1e-6);
        EXPECT_NEAR(rep.predictions->result.sd[k], dense.sd[k], 1e-6 * dense.sd[k]);
    }
}
