#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "error.hpp"
#include "geo.hpp"

namespace ismra {

enum class SplitDim : int { Lon = 0, Lat = 1, Time = 2 };

inline const char* to_string(SplitDim d) {
    switch (d) {
        case SplitDim::Lon: return "lon";
        case SplitDim::Lat: return "lat";
        case SplitDim::Time: return "time";
    }
    return "?";
}

inline double coordinate(const SpatioTemporalPoint& p, SplitDim d) {
    switch (d) {
        case SplitDim::Lon: return p.lon;
        case SplitDim::Lat: return p.lat;
        case SplitDim::Time: return static_cast<double>(p.time);
    }
    return 0.0;
}

/// Axis-aligned box with left-continuous upper edges: lo < x <= hi, plus x == lo
/// on the sides inherited from the (closed) root box.
struct Bounds {
    std::array<double, 3> lo{};
    std::array<double, 3> hi{};
    std::array<bool, 3> lo_closed{true, true, true};

    bool contains(const SpatioTemporalPoint& p) const {
        for (int d = 0; d < 3; ++d) {
            const double x = coordinate(p, static_cast<SplitDim>(d));
            const bool above = x > lo[d] || (lo_closed[d] && x == lo[d]);
            if (!above || x > hi[d]) return false;
        }
        return true;
    }

    double extent(SplitDim d) const { return hi[static_cast<int>(d)] - lo[static_cast<int>(d)]; }

    /// Integer day range admissible inside the time bounds.
    std::pair<std::int32_t, std::int32_t> time_range() const {
        const auto first = static_cast<std::int32_t>(lo_closed[2] ? std::ceil(lo[2]) : std::floor(lo[2]) + 1.0);
        const auto last = static_cast<std::int32_t>(std::floor(hi[2]));
        return {first, last};
    }
};

struct Region {
    Bounds bounds;
    int resolution = 0;
    int parent = -1;
    std::vector<int> children;
    std::string path;
    SplitDim split_dim = SplitDim::Lon;  ///< dimension along which the children were cut
    double split_value = 0.0;            ///< left child holds coordinates <= split_value
    std::vector<std::size_t> obs_idx;
    std::vector<SpatioTemporalPoint> knots;
};

enum class KnotBudgetMode { LevelTotal, PerRegion };
enum class KnotPlacement { Prism, UniformRandom };

struct PartitionConfig {
    int n_lon_splits = 1;
    int n_lat_splits = 1;
    int n_time_splits = 0;
    int M0 = 20;
    int J = 2;
    double thinning_rate = 1.0;
    KnotBudgetMode budget_mode = KnotBudgetMode::LevelTotal;
    int knots_per_region = 8;
    KnotPlacement placement = KnotPlacement::Prism;
    double prism_span = 0.8;    ///< fraction of each dimension covered by the nested prism
    double prism_jitter = 0.01; ///< jitter half-width as a fraction of the region extent

    int K() const { return n_lon_splits + n_lat_splits + n_time_splits; }

    void validate() const {
        if (n_lon_splits < 0 || n_lat_splits < 0 || n_time_splits < 0) {
            throw ConfigError("split counts must be non-negative");
        }
        if (M0 < 1) throw ConfigError("M0 must be >= 1");
        if (J < 1) throw ConfigError("J must be >= 1");
        if (!(thinning_rate > 0.0 && thinning_rate <= 1.0)) throw ConfigError("thinning_rate must lie in (0, 1]");
        if (knots_per_region < 1) throw ConfigError("knots_per_region must be >= 1");
        if (!(prism_span > 0.0 && prism_span < 1.0)) throw ConfigError("prism_span must lie in (0, 1)");
        if (!(prism_jitter >= 0.0 && prism_jitter < 0.5 * (1.0 - prism_span))) {
            throw ConfigError("prism_jitter must keep knots inside the region");
        }
    }

    /// Dimension split when going from resolution `level` to `level + 1`.
    SplitDim split_at(int level) const {
        if (level < n_lon_splits) return SplitDim::Lon;
        if (level < n_lon_splits + n_lat_splits) return SplitDim::Lat;
        return SplitDim::Time;
    }

    /// Knot count assigned to region `rank` of `count` regions at coarse resolution `level`.
    int region_budget(int level, std::size_t rank, std::size_t count) const {
        if (budget_mode == KnotBudgetMode::PerRegion) return knots_per_region;
        const double total_d = static_cast<double>(M0) * std::pow(static_cast<double>(J), level);
        const auto total = static_cast<std::size_t>(total_d);
        const std::size_t share = total / count;
        const std::size_t extra = total % count;
        return static_cast<int>(share + (rank < extra ? 1 : 0));
    }
};

/// Nested partition; regions are stored level by level, left to right, which is
/// also the traversal order used everywhere else.
struct RegionTree {
    std::vector<Region> regions;
    std::vector<std::vector<int>> levels;
    std::vector<SpatioTemporalPoint> obs;
    int K = 0;

    const Region& root() const { return regions.front(); }
    const std::vector<int>& leaves() const { return levels.back(); }

    /// Region index at every resolution for `p`; coordinates outside the root box
    /// are clipped onto it first.
    std::vector<int> locate(SpatioTemporalPoint p) const {
        const Bounds& rb = root().bounds;
        p.lon = std::clamp(p.lon, rb.lo[0], rb.hi[0]);
        p.lat = std::clamp(p.lat, rb.lo[1], rb.hi[1]);
        const auto [t0, t1] = rb.time_range();
        p.time = std::clamp(p.time, t0, std::max(t0, t1));
        std::vector<int> out;
        out.reserve(static_cast<std::size_t>(K) + 1);
        int r = 0;
        out.push_back(r);
        while (!regions[r].children.empty()) {
            const Region& reg = regions[r];
            r = coordinate(p, reg.split_dim) <= reg.split_value ? reg.children[0] : reg.children[1];
            out.push_back(r);
        }
        return out;
    }

    /// Ancestor chain of region `r`, root first, `r` last.
    std::vector<int> path_to(int r) const {
        std::vector<int> out;
        for (int cur = r; cur >= 0; cur = regions[cur].parent) out.push_back(cur);
        std::reverse(out.begin(), out.end());
        return out;
    }

    std::size_t total_knots() const {
        std::size_t n = 0;
        for (const auto& r : regions) n += r.knots.size();
        return n;
    }
};

namespace detail {

inline Bounds bounding_box(std::span<const SpatioTemporalPoint> a, std::span<const SpatioTemporalPoint> b) {
    Bounds out;
    out.lo = {1e300, 1e300, 1e300};
    out.hi = {-1e300, -1e300, -1e300};
    auto grow = [&](const SpatioTemporalPoint& p) {
        for (int d = 0; d < 3; ++d) {
            const double x = coordinate(p, static_cast<SplitDim>(d));
            out.lo[d] = std::min(out.lo[d], x);
            out.hi[d] = std::max(out.hi[d], x);
        }
    };
    for (const auto& p : a) grow(p);
    for (const auto& p : b) grow(p);
    return out;
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

using CoordKey = std::tuple<double, double, std::int32_t>;

inline CoordKey key_of(const SpatioTemporalPoint& p) { return {p.lon, p.lat, p.time}; }

/// Indices `0..count-1` choosing `k` uniformly without replacement, returned sorted.
inline std::vector<std::size_t> sample_indices(std::size_t count, std::size_t k, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    k = std::min(k, count);
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, count - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Points on the edges of the prism nested in `b`: vertices first, then edge
/// midpoints, then quarter points, and so on.
inline std::vector<SpatioTemporalPoint> prism_edge_points(const Bounds& b, std::size_t count,
                                                          const PartitionConfig& cfg, std::mt19937_64& rng,
                                                          const std::string& path) {
    const double inset = 0.5 * (1.0 - cfg.prism_span);
    std::array<std::array<double, 2>, 3> level{};
    std::array<bool, 3> two{};
    for (int d = 0; d < 2; ++d) {
        const double ext = b.hi[d] - b.lo[d];
        level[d] = {b.lo[d] + inset * ext, b.hi[d] - inset * ext};
        two[d] = ext > 0.0;
    }
    const auto [ta, tb] = b.time_range();
    const double text = static_cast<double>(tb - ta);
    level[2] = {std::round(ta + inset * text), std::round(tb - inset * text)};
    two[2] = level[2][0] != level[2][1];

    using Corner = std::array<int, 3>;
    std::vector<Corner> corners;
    for (int t = 0; t < (two[2] ? 2 : 1); ++t) {
        for (int y = 0; y < (two[1] ? 2 : 1); ++y) {
            for (int x = 0; x < (two[0] ? 2 : 1); ++x) corners.push_back({x, y, t});
        }
    }
    auto corner_point = [&](const Corner& c) {
        return std::array<double, 3>{level[0][c[0]], level[1][c[1]], level[2][c[2]]};
    };

    std::vector<std::array<double, 3>> raw;
    for (const auto& c : corners) {
        if (raw.size() == count) break;
        raw.push_back(corner_point(c));
    }

    struct Edge {
        std::array<double, 3> a, b;
        int dim;
        std::set<double> used_times;
    };
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < corners.size(); ++i) {
        for (std::size_t j = i + 1; j < corners.size(); ++j) {
            int diff = 0, dim = -1;
            for (int d = 0; d < 3; ++d) {
                if (corners[i][d] != corners[j][d]) {
                    ++diff;
                    dim = d;
                }
            }
            if (diff == 1) {
                Edge e{corner_point(corners[i]), corner_point(corners[j]), dim, {}};
                e.used_times = {e.a[2], e.b[2]};
                edges.push_back(std::move(e));
            }
        }
    }

    for (int depth = 1; raw.size() < count; ++depth) {
        if (depth > 40 || edges.empty()) {
            throw DataError("cannot place " + std::to_string(count) + " distinct knots in region " + path);
        }
        const long parts = 1L << depth;
        for (long k = 1; k < parts && raw.size() < count; k += 2) {
            const double f = static_cast<double>(k) / static_cast<double>(parts);
            for (auto& e : edges) {
                if (raw.size() == count) break;
                std::array<double, 3> p{};
                for (int d = 0; d < 3; ++d) p[d] = e.a[d] + f * (e.b[d] - e.a[d]);
                if (e.dim == 2) {
                    p[2] = std::round(p[2]);
                    if (!e.used_times.insert(p[2]).second) continue;
                }
                raw.push_back(p);
            }
        }
    }

    std::vector<SpatioTemporalPoint> out;
    out.reserve(raw.size());
    for (const auto& p : raw) {
        SpatioTemporalPoint q{p[0], p[1], static_cast<std::int32_t>(p[2])};
        for (int d = 0; d < 2; ++d) {
            const double half = cfg.prism_jitter * (b.hi[d] - b.lo[d]);
            if (half > 0.0) {
                std::uniform_real_distribution<double> jit(-half, half);
                (d == 0 ? q.lon : q.lat) += jit(rng);
            }
        }
        out.push_back(q);
    }
    return out;
}

inline std::vector<SpatioTemporalPoint> uniform_points(const Bounds& b, std::size_t count, std::mt19937_64& rng) {
    std::vector<SpatioTemporalPoint> out;
    const auto [ta, tb] = b.time_range();
    std::uniform_int_distribution<std::int32_t> tdist(ta, std::max(ta, tb));
    for (std::size_t i = 0; i < count; ++i) {
        SpatioTemporalPoint q;
        for (int d = 0; d < 2; ++d) {
            double x = b.lo[d];
            if (b.hi[d] > b.lo[d]) {
                std::uniform_real_distribution<double> u(b.lo[d], b.hi[d]);
                x = u(rng);
                if (x == b.lo[d] && !b.lo_closed[d]) x = b.hi[d];  // keep inside (lo, hi]
            }
            (d == 0 ? q.lon : q.lat) = x;
        }
        q.time = tdist(rng);
        out.push_back(q);
    }
    return out;
}

}  // namespace detail

/// Recursive median splitting: longitude levels first, then latitude, then time.
///
/// The root box spans the observations and the optional `extent_points`
/// (typically prediction locations) so that later knot placement and point
/// location never need to leave the root.
inline RegionTree build_tree(std::span<const SpatioTemporalPoint> obs, const PartitionConfig& cfg,
                             std::span<const SpatioTemporalPoint> extent_points = {}) {
    cfg.validate();
    if (obs.size() < 2) throw DataError("build_tree: at least 2 observations are required");

    RegionTree tree;
    tree.K = cfg.K();
    tree.obs.assign(obs.begin(), obs.end());

    Region root;
    root.bounds = detail::bounding_box(obs, extent_points);
    root.path = "root";
    root.obs_idx.resize(obs.size());
    std::iota(root.obs_idx.begin(), root.obs_idx.end(), std::size_t{0});
    tree.regions.push_back(std::move(root));
    tree.levels.push_back({0});

    for (int level = 0; level < tree.K; ++level) {
        const SplitDim dim = cfg.split_at(level);
        const int d = static_cast<int>(dim);
        std::vector<int> next;
        for (int r : tree.levels[level]) {
            std::vector<double> values;
            values.reserve(tree.regions[r].obs_idx.size());
            for (std::size_t i : tree.regions[r].obs_idx) values.push_back(coordinate(obs[i], dim));
            const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
            if (*mn == *mx) {
                throw DataError("degenerate split: region " + tree.regions[r].path + " has a single distinct " +
                                to_string(dim) + " value");
            }
            const double boundary = detail::median(values);

            Region left, right;
            left.bounds = right.bounds = tree.regions[r].bounds;
            left.bounds.hi[d] = boundary;
            right.bounds.lo[d] = boundary;
            right.bounds.lo_closed[d] = false;
            for (std::size_t i : tree.regions[r].obs_idx) {
                (coordinate(obs[i], dim) <= boundary ? left : right).obs_idx.push_back(i);
            }
            if (left.obs_idx.empty() || right.obs_idx.empty()) {
                throw DataError("empty region: splitting " + tree.regions[r].path + " along " + to_string(dim) +
                                " at " + std::to_string(boundary) + " leaves a child without observations");
            }
            for (Region* c : {&left, &right}) {
                c->resolution = level + 1;
                c->parent = r;
            }
            left.path = tree.regions[r].path + "/0";
            right.path = tree.regions[r].path + "/1";

            tree.regions[r].split_dim = dim;
            tree.regions[r].split_value = boundary;
            const int li = static_cast<int>(tree.regions.size());
            tree.regions.push_back(std::move(left));
            tree.regions.push_back(std::move(right));
            tree.regions[r].children = {li, li + 1};
            next.push_back(li);
            next.push_back(li + 1);
        }
        tree.levels.push_back(std::move(next));
    }
    return tree;
}

/// Knot placement, coarsest resolution first.
///
/// Finest level: distinct observation coordinates of the leaf, thinned uniformly
/// at random. Coarser levels: available prediction locations first, topped up
/// with jittered prism-edge points. A location used once is never reused, and
/// prediction locations that coincide with observations are never used as coarse
/// knots (they would duplicate a finest-level knot).
inline void place_knots(RegionTree& tree, std::span<const SpatioTemporalPoint> pred, const PartitionConfig& cfg,
                        std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    for (auto& r : tree.regions) r.knots.clear();

    std::set<detail::CoordKey> obs_keys;
    for (const auto& p : tree.obs) obs_keys.insert(detail::key_of(p));

    std::vector<std::vector<int>> pred_path(pred.size());
    std::vector<char> available(pred.size(), 1);
    std::set<detail::CoordKey> used;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        pred_path[i] = tree.locate(pred[i]);
        if (obs_keys.count(detail::key_of(pred[i])) || !tree.regions[pred_path[i].back()].bounds.contains(pred[i])) {
            available[i] = 0;
        }
    }

    for (int level = 0; level < tree.K; ++level) {
        const auto& regs = tree.levels[level];
        for (std::size_t rank = 0; rank < regs.size(); ++rank) {
            const int r = regs[rank];
            Region& reg = tree.regions[r];
            const auto budget = static_cast<std::size_t>(cfg.region_budget(level, rank, regs.size()));
            if (budget == 0) continue;
            if (cfg.placement == KnotPlacement::UniformRandom) {
                reg.knots = detail::uniform_points(reg.bounds, budget, rng);
                continue;
            }
            std::vector<std::size_t> cand;
            for (std::size_t i = 0; i < pred.size(); ++i) {
                if (available[i] && pred_path[i][level] == r && !used.count(detail::key_of(pred[i]))) {
                    cand.push_back(i);
                }
            }
            std::vector<std::size_t> chosen;
            if (cand.size() < budget) {
                chosen = cand;
            } else {
                for (std::size_t k : detail::sample_indices(cand.size(), budget, rng)) chosen.push_back(cand[k]);
            }
            for (std::size_t i : chosen) {
                reg.knots.push_back(pred[i]);
                available[i] = 0;
                used.insert(detail::key_of(pred[i]));
            }
            if (reg.knots.size() < budget) {
                auto extra = detail::prism_edge_points(reg.bounds, budget - reg.knots.size(), cfg, rng, reg.path);
                reg.knots.insert(reg.knots.end(), extra.begin(), extra.end());
            }
        }
    }

    for (int r : tree.leaves()) {
        Region& reg = tree.regions[r];
        std::vector<SpatioTemporalPoint> uniq;
        std::set<detail::CoordKey> seen;
        for (std::size_t i : reg.obs_idx) {
            if (seen.insert(detail::key_of(tree.obs[i])).second) uniq.push_back(tree.obs[i]);
        }
        if (cfg.thinning_rate < 1.0) {
            const auto keep = static_cast<std::size_t>(std::ceil(cfg.thinning_rate * static_cast<double>(uniq.size())));
            std::vector<SpatioTemporalPoint> kept;
            for (std::size_t k : detail::sample_indices(uniq.size(), keep, rng)) kept.push_back(uniq[k]);
            uniq = std::move(kept);
        }
        reg.knots = std::move(uniq);
    }
}

/// CSV summary: one row per region.
inline void write_tree_report(std::ostream& os, const RegionTree& tree) {
    os << "region,resolution,path,lon_lo,lon_hi,lat_lo,lat_hi,time_lo,time_hi,n_obs,n_knots\n";
    os.precision(10);
    for (std::size_t i = 0; i < tree.regions.size(); ++i) {
        const Region& r = tree.regions[i];
        os << i << ',' << r.resolution << ',' << r.path;
        for (int d = 0; d < 3; ++d) os << ',' << r.bounds.lo[d] << ',' << r.bounds.hi[d];
        os << ',' << r.obs_idx.size() << ',' << r.knots.size() << '\n';
    }
}

}  // namespace ismra
