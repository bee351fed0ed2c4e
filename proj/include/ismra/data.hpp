#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "geo.hpp"

namespace ismra {

struct CovariateSpec {
    std::string name;
    bool categorical = false;
    std::string reference;  ///< reference level of a categorical covariate

    /// "name" (continuous) or "name:categorical:reference".
    static CovariateSpec parse(const std::string& text) {
        CovariateSpec c;
        const auto a = text.find(':');
        if (a == std::string::npos) {
            c.name = text;
        } else {
            const auto b = text.find(':', a + 1);
            if (b == std::string::npos || text.substr(a + 1, b - a - 1) != "categorical" || b + 1 >= text.size()) {
                throw ConfigError("covariate '" + text + "': expected name or name:categorical:reference");
            }
            c.name = text.substr(0, a);
            c.categorical = true;
            c.reference = text.substr(b + 1);
        }
        if (c.name.empty()) throw ConfigError("covariate with empty name");
        return c;
    }
};

enum class TimeFormat { Day, Date };

struct Schema {
    std::string lon = "lon";
    std::string lat = "lat";
    std::string time = "day";
    TimeFormat time_format = TimeFormat::Day;
    std::string response = "y";
    std::vector<CovariateSpec> covariates;
    bool intercept = true;
};

/// Constants fixed by the training file and reused for prediction files.
struct Encoding {
    long date_origin = 0;                         ///< days since 1970-01-01 of the earliest training date
    std::map<std::string, double> centers;        ///< continuous covariate means
    std::map<std::string, std::vector<std::string>> levels;  ///< non-reference levels, sorted
};

struct Dataset {
    std::vector<SpatioTemporalPoint> points;
    std::vector<std::string> time_tokens;  ///< time column as written in the file
    Eigen::VectorXd y;                     ///< empty when the file has no response
    Eigen::MatrixXd X;
    std::vector<std::string> column_names;
    Encoding encoding;

    std::size_t size() const { return points.size(); }
    bool has_response() const { return y.size() == static_cast<Eigen::Index>(points.size()) && !points.empty(); }
};

namespace detail {

inline std::string trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return std::string(s);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::optional<double> parse_double(const std::string& s) {
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

/// Days since 1970-01-01 of an ISO "YYYY-MM-DD" date.
inline std::optional<long> parse_date(const std::string& s) {
    int y = 0;
    unsigned m = 0, d = 0;
    char tail = 0;
    if (std::sscanf(s.c_str(), "%d-%u-%u%c", &y, &m, &d, &tail) != 3) return std::nullopt;
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) return std::nullopt;
    return static_cast<long>(std::chrono::sys_days(ymd).time_since_epoch().count());
}

}  // namespace detail

/// A CSV table with a mandatory header; cells are not quoted.
struct CsvTable {
    std::string path;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::optional<std::size_t> column(const std::string& name) const {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) return std::nullopt;
        return static_cast<std::size_t>(it - header.begin());
    }

    std::size_t require(const std::string& name) const {
        const auto c = column(name);
        if (!c) throw DataError(path + ": missing column '" + name + "'");
        return *c;
    }

    /// Row numbers in messages count the header as row 1.
    [[noreturn]] void fail(std::size_t row, std::size_t col, const std::string& msg) const {
        throw DataError(path + ": row " + std::to_string(row + 2) + ", column '" + header[col] + "': " + msg);
    }

    double number(std::size_t row, std::size_t col) const {
        const auto v = detail::parse_double(rows[row][col]);
        if (!v) fail(row, col, "not a finite number: '" + rows[row][col] + "'");
        return *v;
    }
};

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path + ": cannot open file");
    CsvTable t;
    t.path = path;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (t.header.empty()) {
            t.header = std::move(cells);
            continue;
        }
        if (cells.size() != t.header.size()) {
            throw DataError(path + ": row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                            " fields, header has " + std::to_string(t.header.size()));
        }
        t.rows.push_back(std::move(cells));
    }
    if (t.header.empty()) throw DataError(path + ": empty file");
    if (t.rows.empty()) throw DataError(path + ": no data rows");
    return t;
}

/// Builds a dataset from a table. Without `training`, the table is the training
/// file: dates are counted from its earliest date, continuous covariates are
/// centered at their means and categorical levels are collected. With
/// `training`, its encoding is reused and the response may be absent.
inline Dataset make_dataset(const CsvTable& t, const Schema& schema, const Encoding* training = nullptr) {
    Dataset ds;
    const std::size_t n = t.rows.size();
    const std::size_t c_lon = t.require(schema.lon), c_lat = t.require(schema.lat), c_time = t.require(schema.time);
    const auto c_resp = t.column(schema.response);
    if (!training && !c_resp) t.require(schema.response);

    std::vector<long> raw_time(n);
    for (std::size_t r = 0; r < n; ++r) {
        const double lon = t.number(r, c_lon), lat = t.number(r, c_lat);
        if (lon < -180.0 || lon > 180.0) t.fail(r, c_lon, "longitude out of range");
        if (lat < -90.0 || lat > 90.0) t.fail(r, c_lat, "latitude out of range");
        const std::string& tok = t.rows[r][c_time];
        if (schema.time_format == TimeFormat::Date) {
            const auto d = detail::parse_date(tok);
            if (!d) t.fail(r, c_time, "not a YYYY-MM-DD date: '" + tok + "'");
            raw_time[r] = *d;
        } else {
            const auto v = detail::parse_double(tok);
            if (!v || *v != std::floor(*v)) t.fail(r, c_time, "not an integer day: '" + tok + "'");
            raw_time[r] = static_cast<long>(*v);
        }
        ds.points.push_back({lon, lat, 0});
        ds.time_tokens.push_back(tok);
    }
    if (training) {
        ds.encoding = *training;
    } else if (schema.time_format == TimeFormat::Date) {
        ds.encoding.date_origin = *std::min_element(raw_time.begin(), raw_time.end());
    }
    for (std::size_t r = 0; r < n; ++r) ds.points[r].time = static_cast<std::int32_t>(raw_time[r] - ds.encoding.date_origin);

    if (c_resp) {
        ds.y.resize(static_cast<Eigen::Index>(n));
        bool any_missing = false;
        for (std::size_t r = 0; r < n; ++r) {
            if (t.rows[r][*c_resp].empty()) {
                if (!training) t.fail(r, *c_resp, "missing response in a training row");
                any_missing = true;
                continue;
            }
            ds.y[static_cast<Eigen::Index>(r)] = t.number(r, *c_resp);
        }
        if (any_missing) ds.y.resize(0);
    }

    // covariate columns
    std::vector<Eigen::VectorXd> cols;
    if (schema.intercept) {
        cols.push_back(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n)));
        ds.column_names.push_back("intercept");
    }
    for (const auto& cov : schema.covariates) {
        const std::size_t c = t.require(cov.name);
        if (!cov.categorical) {
            Eigen::VectorXd v(static_cast<Eigen::Index>(n));
            for (std::size_t r = 0; r < n; ++r) v[static_cast<Eigen::Index>(r)] = t.number(r, c);
            if (!training) ds.encoding.centers[cov.name] = v.mean();
            const auto it = ds.encoding.centers.find(cov.name);
            if (it == ds.encoding.centers.end()) throw DataError(t.path + ": covariate '" + cov.name + "' unknown to training");
            v.array() -= it->second;
            cols.push_back(std::move(v));
            ds.column_names.push_back(cov.name);
            continue;
        }
        if (!training) {
            std::vector<std::string> lv;
            bool has_ref = false;
            for (std::size_t r = 0; r < n; ++r) {
                const std::string& s = t.rows[r][c];
                if (s.empty()) t.fail(r, c, "missing categorical value");
                if (s == cov.reference) has_ref = true;
                else lv.push_back(s);
            }
            if (!has_ref) throw DataError(t.path + ": reference level '" + cov.reference + "' of '" + cov.name + "' never occurs");
            std::sort(lv.begin(), lv.end());
            lv.erase(std::unique(lv.begin(), lv.end()), lv.end());
            ds.encoding.levels[cov.name] = lv;
        }
        const auto& lv = ds.encoding.levels.at(cov.name);
        std::vector<Eigen::VectorXd> dummies(lv.size(), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n)));
        for (std::size_t r = 0; r < n; ++r) {
            const std::string& s = t.rows[r][c];
            if (s == cov.reference) continue;
            const auto it = std::lower_bound(lv.begin(), lv.end(), s);
            if (it == lv.end() || *it != s) t.fail(r, c, "level '" + s + "' not seen in training");
            dummies[static_cast<std::size_t>(it - lv.begin())][static_cast<Eigen::Index>(r)] = 1.0;
        }
        for (std::size_t k = 0; k < lv.size(); ++k) {
            cols.push_back(std::move(dummies[k]));
            ds.column_names.push_back(cov.name + "=" + lv[k]);
        }
    }
    ds.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) ds.X.col(static_cast<Eigen::Index>(j)) = cols[j];
    return ds;
}

inline Dataset ingest_csv(const std::string& path, const Schema& schema, const Encoding* training = nullptr) {
    return make_dataset(read_csv(path), schema, training);
}

/// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) return "nan";
    return std::string(buf, ptr);
}

}  // namespace ismra
