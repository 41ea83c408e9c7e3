#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pilrecon/raster.hpp"

namespace pilrecon {

enum class LatitudeMode { EqualAngle, SineLatitude };
enum class Embedding { Cylinder, Sphere, Plane };

/// Synoptic raster geometry plus the parameters of its 3D embedding.
struct GridSpec {
    int height = 0;
    int width = 0;
    /// Empty columns inserted between the right and left map edges when folding onto the cylinder.
    int gap_px = 0;
    LatitudeMode latitude_mode = LatitudeMode::EqualAngle;
    Embedding embedding = Embedding::Cylinder;
    double z_half_height = 1.0;

    /// Defaults used throughout: cylinder, equal-angle rows, gap of width/64 columns.
    static GridSpec for_map(int height, int width);

    void validate() const;
    std::size_t pixel_count() const {
        return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    }
};

using Vec3 = Eigen::Vector3d;
using Points = Eigen::Matrix<double, 3, Eigen::Dynamic>;

Vec3 embed_pixel(const GridSpec& spec, int row, int col);

/// Embedded coordinates of every pixel, column i = pixel i in row-major order.
Points embed_all(const GridSpec& spec);

/// Latitude of the pixel-centre of `row`, degrees, row 0 northernmost.
double latitude_of_row(const GridSpec& spec, int row);

struct BandMasks {
    BoolRaster north;    ///< latitude > 80
    BoolRaster south;    ///< latitude < -80
    BoolRaster equator;  ///< |latitude| <= 40
};

inline constexpr double kPoleBandDeg = 80.0;
inline constexpr double kEquatorBandDeg = 40.0;

BandMasks band_masks(const GridSpec& spec);

enum class Provenance { Grid, User, File };

struct ReferencePoint {
    int row = 0;
    int col = 0;
    int polarity = 1;

    friend bool operator==(const ReferencePoint&, const ReferencePoint&) = default;
};

struct ReferencePointSet {
    std::vector<ReferencePoint> points;
    Provenance provenance = Provenance::User;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }

    /// Throws RangeError / DomainError / FormatError on out-of-bounds, polarity not +-1, or duplicates.
    void validate(const GridSpec& spec) const;
};

/// Uniform grid of reference points with offset step/2; nodes where the target is 0 are dropped.
/// A step larger than the smaller raster dimension yields an empty set and fills `warning`.
ReferencePointSet reference_grid(const GridSpec& spec, int step, const PolarityMap& target,
                                 std::string* warning = nullptr);

std::string to_string(LatitudeMode mode);
std::string to_string(Embedding embedding);
LatitudeMode parse_latitude_mode(const std::string& text);
Embedding parse_embedding(const std::string& text);

}  // namespace pilrecon
