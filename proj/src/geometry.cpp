#include "pilrecon/geometry.hpp"

#include <cmath>
#include <numbers>
#include <set>
#include <utility>

namespace pilrecon {
namespace {

constexpr double kPi = std::numbers::pi;

void check_pixel(const GridSpec& spec, int row, int col) {
    if (row < 0 || row >= spec.height || col < 0 || col >= spec.width) {
        throw RangeError("pixel (" + std::to_string(row) + ", " + std::to_string(col) +
                         ") outside " + std::to_string(spec.height) + "x" +
                         std::to_string(spec.width) + " grid");
    }
}

double longitude_angle(const GridSpec& spec, int col) {
    return 2.0 * kPi * (col + 0.5) / static_cast<double>(spec.width + spec.gap_px);
}

BoolRaster row_band(const GridSpec& spec, auto&& predicate) {
    BoolRaster band(spec.height, spec.width, 0);
    for (int r = 0; r < spec.height; ++r) {
        if (predicate(latitude_of_row(spec, r))) {
            for (int c = 0; c < spec.width; ++c) {
                band.at(r, c) = 1;
            }
        }
    }
    return band;
}

}  // namespace

GridSpec GridSpec::for_map(int height, int width) {
    GridSpec spec;
    spec.height = height;
    spec.width = width;
    spec.gap_px = width / 64;
    return spec;
}

void GridSpec::validate() const {
    if (height < 2 || width < 2) {
        throw SizeError("grid must be at least 2x2, got " + std::to_string(height) + "x" +
                        std::to_string(width));
    }
    if (gap_px < 0) {
        throw DomainError("gap_px must be non-negative");
    }
    if (!(z_half_height > 0.0) || !std::isfinite(z_half_height)) {
        throw DomainError("z_half_height must be positive and finite");
    }
}

Vec3 embed_pixel(const GridSpec& spec, int row, int col) {
    check_pixel(spec, row, col);
    switch (spec.embedding) {
        case Embedding::Cylinder: {
            const double phi = longitude_angle(spec, col);
            const double z = spec.z_half_height * (1.0 - 2.0 * (row + 0.5) / spec.height);
            return {std::cos(phi), std::sin(phi), z};
        }
        case Embedding::Sphere: {
            const double phi = longitude_angle(spec, col);
            const double theta = latitude_of_row(spec, row) * kPi / 180.0;
            return {std::cos(theta) * std::cos(phi), std::cos(theta) * std::sin(phi),
                    std::sin(theta)};
        }
        case Embedding::Plane:
            return {(col + 0.5) / spec.width, (row + 0.5) / spec.height, 0.0};
    }
    throw DomainError("unknown embedding");
}

Points embed_all(const GridSpec& spec) {
    spec.validate();
    Points pts(3, static_cast<Eigen::Index>(spec.pixel_count()));
    Eigen::Index i = 0;
    for (int r = 0; r < spec.height; ++r) {
        for (int c = 0; c < spec.width; ++c) {
            pts.col(i++) = embed_pixel(spec, r, c);
        }
    }
    return pts;
}

double latitude_of_row(const GridSpec& spec, int row) {
    if (row < 0 || row >= spec.height) {
        throw RangeError("row " + std::to_string(row) + " outside grid of height " +
                         std::to_string(spec.height));
    }
    const double u = 1.0 - (2.0 * row + 1.0) / spec.height;
    if (spec.latitude_mode == LatitudeMode::EqualAngle) {
        return 90.0 * u;
    }
    return std::asin(u) * 180.0 / kPi;
}

BandMasks band_masks(const GridSpec& spec) {
    spec.validate();
    return {row_band(spec, [](double lat) { return lat > kPoleBandDeg; }),
            row_band(spec, [](double lat) { return lat < -kPoleBandDeg; }),
            row_band(spec, [](double lat) { return std::abs(lat) <= kEquatorBandDeg; })};
}

void ReferencePointSet::validate(const GridSpec& spec) const {
    std::set<std::pair<int, int>> seen;
    for (const auto& p : points) {
        check_pixel(spec, p.row, p.col);
        if (p.polarity != 1 && p.polarity != -1) {
            throw DomainError("reference point (" + std::to_string(p.row) + ", " +
                              std::to_string(p.col) + ") has polarity " +
                              std::to_string(p.polarity) + ", expected -1 or 1");
        }
        if (!seen.emplace(p.row, p.col).second) {
            throw FormatError("duplicate reference point (" + std::to_string(p.row) + ", " +
                              std::to_string(p.col) + ")");
        }
    }
}

ReferencePointSet reference_grid(const GridSpec& spec, int step, const PolarityMap& target,
                                 std::string* warning) {
    spec.validate();
    if (step < 1) {
        throw DomainError("grid step must be >= 1");
    }
    if (!target.same_shape(spec.height, spec.width)) {
        throw SizeError("target shape does not match grid");
    }
    ReferencePointSet set;
    set.provenance = Provenance::Grid;
    if (step > std::min(spec.height, spec.width)) {
        if (warning != nullptr) {
            *warning = "grid step " + std::to_string(step) + " exceeds raster size " +
                       std::to_string(spec.height) + "x" + std::to_string(spec.width) +
                       "; no reference points";
        }
        return set;
    }
    const int offset = step / 2;
    for (int r = offset; r < spec.height; r += step) {
        for (int c = offset; c < spec.width; c += step) {
            const int p = target.at(r, c);
            if (p != 0) {
                set.points.push_back({r, c, p});
            }
        }
    }
    return set;
}

std::string to_string(LatitudeMode mode) {
    return mode == LatitudeMode::EqualAngle ? "equal-angle" : "sine-latitude";
}

std::string to_string(Embedding embedding) {
    switch (embedding) {
        case Embedding::Cylinder:
            return "cylinder";
        case Embedding::Sphere:
            return "sphere";
        case Embedding::Plane:
            return "plane";
    }
    return "cylinder";
}

LatitudeMode parse_latitude_mode(const std::string& text) {
    if (text == "equal-angle") {
        return LatitudeMode::EqualAngle;
    }
    if (text == "sine-latitude") {
        return LatitudeMode::SineLatitude;
    }
    throw DomainError("unknown latitude mode '" + text + "'");
}

Embedding parse_embedding(const std::string& text) {
    if (text == "cylinder") {
        return Embedding::Cylinder;
    }
    if (text == "sphere") {
        return Embedding::Sphere;
    }
    if (text == "plane") {
        return Embedding::Plane;
    }
    throw DomainError("unknown embedding '" + text + "'");
}

}  // namespace pilrecon
