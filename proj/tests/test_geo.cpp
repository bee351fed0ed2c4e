#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include <gtest/gtest.h>

#include "ismra/geo.hpp"

using namespace ismra;

TEST(Haversine, IdenticalPointsAreZero) {
    const auto a = make_point(72.826, 18.975, 0);
    EXPECT_EQ(haversine_km(a, a), 0.0);
}

TEST(Haversine, OneDegreeOfLatitude) {
    const auto a = make_point(72.826, 18.975, 0);
    const auto b = make_point(72.826, 19.975, 4);
    const double expected = kEarthRadiusKm * std::numbers::pi / 180.0;
    EXPECT_NEAR(haversine_km(a, b), expected, 1e-9);
    EXPECT_NEAR(haversine_km(a, b), 111.195, 0.01);
}

TEST(Haversine, QuarterGreatCircle) {
    const auto a = make_point(0, 0, 0);
    const auto b = make_point(90, 0, 0);
    EXPECT_NEAR(haversine_km(a, b), kEarthRadiusKm * std::numbers::pi / 2.0, 1e-9);
    EXPECT_NEAR(haversine_km(a, b), 10007.54, 0.1);
}

TEST(Haversine, IgnoresTime) {
    const auto a = make_point(10, 20, 0);
    const auto b = make_point(11, 21, 0);
    const auto c = make_point(11, 21, 9);
    EXPECT_EQ(haversine_km(a, b), haversine_km(a, c));
}

TEST(Haversine, AntipodalPointsAreHalfCircumference) {
    const auto a = make_point(0, 0, 0);
    const auto b = make_point(180, 0, 0);
    EXPECT_NEAR(haversine_km(a, b), kEarthRadiusKm * std::numbers::pi, 1e-6);
}

TEST(Haversine, SymmetricAndTriangleInequality) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> lon(-180, 180), lat(-90, 90);
    for (int k = 0; k < 2000; ++k) {
        const auto a = make_point(lon(rng), lat(rng), 0);
        const auto b = make_point(lon(rng), lat(rng), 0);
        const auto c = make_point(lon(rng), lat(rng), 0);
        const double ab = haversine_km(a, b), bc = haversine_km(b, c), ac = haversine_km(a, c);
        EXPECT_EQ(ab, haversine_km(b, a));
        EXPECT_GE(ab, 0.0);
        EXPECT_LE(ac, (ab + bc) * (1.0 + 1e-9));
    }
}

TEST(Haversine, ZeroOnlyForSameLocation) {
    const auto a = make_point(73.3, 18.7, 0);
    const auto b = make_point(73.3 + 1e-9, 18.7, 0);
    EXPECT_GT(haversine_km(a, b), 0.0);
}

TEST(TemporalGap, Examples) {
    EXPECT_EQ(temporal_gap(make_point(0, 0, 3), make_point(0, 0, 3)), 0);
    EXPECT_EQ(temporal_gap(make_point(0, 0, 0), make_point(0, 0, 7)), 7);
    EXPECT_EQ(temporal_gap(make_point(0, 0, 5), make_point(0, 0, 2)), 3);
    EXPECT_EQ(temporal_gap(make_point(0, 0, 2), make_point(0, 0, 5)), 3);
}

TEST(Point, RejectsInvalidCoordinates) {
    EXPECT_THROW(make_point(181, 0, 0), std::invalid_argument);
    EXPECT_THROW(make_point(0, -91, 0), std::invalid_argument);
    EXPECT_THROW(make_point(0, 0, -1), std::invalid_argument);
    EXPECT_THROW(make_point(std::nan(""), 0, 0), std::invalid_argument);
    EXPECT_NO_THROW(make_point(-180, 90, 0));
}

TEST(Point, EqualityUsesAllCoordinates) {
    EXPECT_EQ(make_point(1, 2, 3), make_point(1, 2, 3));
    EXPECT_NE(make_point(1, 2, 3), make_point(1, 2, 4));
}
