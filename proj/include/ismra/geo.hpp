#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

namespace ismra {

inline constexpr double kEarthRadiusKm = 6371.0;

/// Longitude/latitude in degrees plus an integer day index.
///
/// Use `make_point` for validated construction; the aggregate form is left
/// open so that knots and test fixtures can be built without ceremony.
struct SpatioTemporalPoint {
    double lon = 0.0;
    double lat = 0.0;
    std::int32_t time = 0;

    friend bool operator==(const SpatioTemporalPoint&, const SpatioTemporalPoint&) = default;
};

inline bool is_valid(const SpatioTemporalPoint& p) {
    return std::isfinite(p.lon) && std::isfinite(p.lat) && p.lon >= -180.0 && p.lon <= 180.0 &&
           p.lat >= -90.0 && p.lat <= 90.0 && p.time >= 0;
}

inline SpatioTemporalPoint make_point(double lon, double lat, std::int32_t time) {
    SpatioTemporalPoint p{lon, lat, time};
    if (!is_valid(p)) {
        throw std::invalid_argument("invalid spatiotemporal point (" + std::to_string(lon) + ", " +
                                    std::to_string(lat) + ", " + std::to_string(time) + ")");
    }
    return p;
}

/// Great-circle distance in km; ignores time.
inline double haversine_km(const SpatioTemporalPoint& a, const SpatioTemporalPoint& b) {
    constexpr double deg = std::numbers::pi / 180.0;
    const double dlat = (b.lat - a.lat) * deg;
    const double dlon = (b.lon - a.lon) * deg;
    const double s_lat = std::sin(0.5 * dlat);
    const double s_lon = std::sin(0.5 * dlon);
    // symmetric in (a, b): cos products commute and squared sines are even
    double h = s_lat * s_lat + std::cos(a.lat * deg) * std::cos(b.lat * deg) * s_lon * s_lon;
    h = std::min(1.0, std::max(0.0, h));
    return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

inline std::int32_t temporal_gap(const SpatioTemporalPoint& a, const SpatioTemporalPoint& b) {
    return a.time > b.time ? a.time - b.time : b.time - a.time;
}

}  // namespace ismra
