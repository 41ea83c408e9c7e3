#include <cmath>
#include <numbers>
#include <set>
#include <tuple>

#include <doctest.h>

#include "pilrecon/geometry.hpp"

using namespace pilrecon;

namespace {

GridSpec grid(int h, int w, int gap = 0, Embedding e = Embedding::Cylinder,
              LatitudeMode lm = LatitudeMode::EqualAngle) {
    GridSpec s;
    s.height = h;
    s.width = w;
    s.gap_px = gap;
    s.embedding = e;
    s.latitude_mode = lm;
    return s;
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("cylinder quarter turn at the top-left pixel of a 2x2 map") {
    const Vec3 p = embed_pixel(grid(2, 2), 0, 0);
    CHECK(std::abs(p.x()) < 1e-15);
    CHECK(p.y() == doctest::Approx(1.0));
    CHECK(p.z() == doctest::Approx(0.5));
}

TEST_CASE("plane uses pixel centres") {
    const Vec3 p = embed_pixel(grid(2, 2, 0, Embedding::Plane), 1, 1);
    CHECK(p.x() == 0.75);
    CHECK(p.y() == 0.75);
    CHECK(p.z() == 0.0);
}

TEST_CASE("seam gap on a 256x512 map with gap 8") {
    const GridSpec s = grid(256, 512, 8);
    const Vec3 a = embed_pixel(s, 0, 0);
    const Vec3 b = embed_pixel(s, 0, 511);
    const double phi_a = std::atan2(a.y(), a.x());
    double phi_b = std::atan2(b.y(), b.x());
    if (phi_b < phi_a) {
        phi_b += 2 * std::numbers::pi;
    }
    const double sep = phi_b - phi_a;
    CHECK(sep == doctest::Approx(2 * std::numbers::pi * 511.0 / 520.0).epsilon(1e-12));
    const double gap = 2 * std::numbers::pi - sep;
    CHECK(gap == doctest::Approx(2 * std::numbers::pi * 9.0 / 520.0).epsilon(1e-12));
    CHECK(gap > 2 * std::numbers::pi / 520.0);
}

TEST_CASE("default gap is width / 64") {
    CHECK(GridSpec::for_map(256, 512).gap_px == 8);
    CHECK(GridSpec::for_map(64, 128).gap_px == 2);
}

TEST_CASE("every cylinder point has unit radius and z falls with row") {
    const GridSpec s = grid(37, 91, 3);
    const Points pts = embed_all(s);
    REQUIRE(pts.cols() == 37 * 91);
    for (Eigen::Index i = 0; i < pts.cols(); ++i) {
        const double r2 = pts(0, i) * pts(0, i) + pts(1, i) * pts(1, i);
        REQUIRE(std::abs(r2 - 1.0) < 1e-12);
    }
    for (int r = 1; r < s.height; ++r) {
        CHECK(embed_pixel(s, r, 5).z() < embed_pixel(s, r - 1, 5).z());
    }
}

TEST_CASE("embedding is injective on the pixel lattice") {
    for (Embedding e : {Embedding::Cylinder, Embedding::Sphere, Embedding::Plane}) {
        for (int gap : {0, 2}) {
            const GridSpec s = grid(24, 48, gap, e);
            std::set<std::tuple<double, double, double>> seen;
            for (int r = 0; r < s.height; ++r) {
                for (int c = 0; c < s.width; ++c) {
                    const Vec3 p = embed_pixel(s, r, c);
                    seen.emplace(p.x(), p.y(), p.z());
                }
            }
            CHECK(seen.size() == 24u * 48u);
        }
    }
}

TEST_CASE("sphere points lie on the unit sphere at their row latitude") {
    const GridSpec s = grid(18, 36, 0, Embedding::Sphere);
    const Vec3 p = embed_pixel(s, 0, 0);
    CHECK(p.norm() == doctest::Approx(1.0));
    CHECK(std::asin(p.z()) * 180.0 / std::numbers::pi == doctest::Approx(85.0));
}

TEST_CASE("out-of-bounds pixels raise range errors") {
    const GridSpec s = grid(4, 8);
    CHECK_THROWS_AS(embed_pixel(s, 4, 0), RangeError);
    CHECK_THROWS_AS(embed_pixel(s, 0, -1), RangeError);
    CHECK_THROWS_AS(latitude_of_row(s, -1), RangeError);
    CHECK_THROWS_AS(latitude_of_row(s, 4), RangeError);
}

TEST_CASE("grid spec validation") {
    CHECK_THROWS_AS(grid(1, 8).validate(), SizeError);
    CHECK_THROWS_AS(grid(8, 1).validate(), SizeError);
    CHECK_THROWS_AS(grid(8, 8, -1).validate(), DomainError);
    CHECK_NOTHROW(grid(2, 2).validate());
}

TEST_CASE("latitude of rows") {
    const GridSpec s = grid(180, 360);
    CHECK(latitude_of_row(s, 0) == doctest::Approx(89.5));
    CHECK(latitude_of_row(s, 89) == doctest::Approx(0.5));
    CHECK(latitude_of_row(s, 90) == doctest::Approx(-0.5));
    CHECK(latitude_of_row(grid(2, 2, 0, Embedding::Cylinder, LatitudeMode::SineLatitude), 0) ==
          doctest::Approx(30.0));
}

TEST_CASE("band masks") {
    SUBCASE("H=18: only row 0 is north of 80") {
        const BandMasks b = band_masks(grid(18, 4));
        for (int r = 0; r < 18; ++r) {
            CHECK(static_cast<bool>(b.north.at(r, 0)) == (r == 0));
            CHECK(static_cast<bool>(b.south.at(r, 0)) == (r == 17));
            CHECK(static_cast<bool>(b.equator.at(r, 2)) == (r >= 5 && r <= 12));
        }
    }
    SUBCASE("H=256: north rows 0..13") {
        const GridSpec s = grid(256, 8);
        const BandMasks b = band_masks(s);
        for (int r = 0; r < 256; ++r) {
            // independent evaluation of the equal-angle formula
            const double lat = 90.0 * (1.0 - (2.0 * r + 1.0) / 256.0);
            CHECK(static_cast<bool>(b.north.at(r, 3)) == (lat > 80.0));
            CHECK(static_cast<bool>(b.north.at(r, 3)) == (r <= 13));
        }
    }
    SUBCASE("bands are row-constant and disjoint") {
        for (LatitudeMode lm : {LatitudeMode::EqualAngle, LatitudeMode::SineLatitude}) {
            const GridSpec s = grid(64, 16, 0, Embedding::Cylinder, lm);
            const BandMasks b = band_masks(s);
            for (int r = 0; r < s.height; ++r) {
                for (int c = 1; c < s.width; ++c) {
                    CHECK(b.north.at(r, c) == b.north.at(r, 0));
                    CHECK(b.equator.at(r, c) == b.equator.at(r, 0));
                }
                CHECK_FALSE((b.north.at(r, 0) && b.equator.at(r, 0)));
                CHECK_FALSE((b.south.at(r, 0) && b.equator.at(r, 0)));
                CHECK_FALSE((b.south.at(r, 0) && b.north.at(r, 0)));
            }
        }
    }
}

TEST_CASE("reference grid counts") {
    const GridSpec s = grid(256, 512, 8);
    PolarityMap known(256, 512, 1);
    CHECK(reference_grid(s, 64, known).points.size() == 32);
    CHECK(reference_grid(s, 32, known).points.size() == 128);

    SUBCASE("nodes on unknown target pixels are dropped") {
        PolarityMap t = known;
        t.at(16, 48) = 0;  // node (16 + 0*32, 16 + 1*32)
        CHECK(reference_grid(s, 32, t).points.size() == 127);
    }
    SUBCASE("offsets are step/2 and polarity comes from the target") {
        PolarityMap t(256, 512, -1);
        t.at(32, 96) = 1;
        const auto refs = reference_grid(s, 64, t);
        CHECK(refs.provenance == Provenance::Grid);
        CHECK(refs.points.front().row == 32);
        CHECK(refs.points.front().col == 32);
        int positives = 0;
        for (const auto& p : refs.points) {
            CHECK((p.row - 32) % 64 == 0);
            CHECK((p.col - 32) % 64 == 0);
            positives += p.polarity == 1;
        }
        CHECK(positives == 1);
    }
    SUBCASE("step 1 covers every pixel") {
        const GridSpec small = grid(9, 13);
        const auto refs = reference_grid(small, 1, PolarityMap(9, 13, -1));
        CHECK(refs.points.size() == 9u * 13u);
        CHECK_NOTHROW(refs.validate(small));
    }
    SUBCASE("a step larger than the map gives an empty set and a warning") {
        std::string warning;
        const auto refs = reference_grid(grid(16, 32), 17, PolarityMap(16, 32, 1), &warning);
        CHECK(refs.points.empty());
        CHECK_FALSE(warning.empty());
    }
    CHECK_THROWS_AS(reference_grid(s, 0, known), DomainError);
    CHECK_THROWS_AS(reference_grid(s, 8, PolarityMap(4, 4, 1)), SizeError);
}

TEST_CASE("reference point set validation") {
    const GridSpec s = grid(4, 4);
    ReferencePointSet refs;
    refs.points = {{0, 0, 1}, {3, 3, -1}};
    CHECK_NOTHROW(refs.validate(s));
    refs.points.push_back({0, 0, -1});
    CHECK_THROWS(refs.validate(s));
    refs.points = {{1, 1, 0}};
    CHECK_THROWS_AS(refs.validate(s), DomainError);
    refs.points = {{4, 0, 1}};
    CHECK_THROWS_AS(refs.validate(s), RangeError);
}

TEST_CASE("mode names round-trip") {
    for (LatitudeMode m : {LatitudeMode::EqualAngle, LatitudeMode::SineLatitude}) {
        CHECK(parse_latitude_mode(to_string(m)) == m);
    }
    for (Embedding e : {Embedding::Cylinder, Embedding::Sphere, Embedding::Plane}) {
        CHECK(parse_embedding(to_string(e)) == e);
    }
    CHECK_THROWS_AS(parse_embedding("torus"), DomainError);
}

}
