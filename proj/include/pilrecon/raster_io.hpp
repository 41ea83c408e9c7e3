#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <variant>

#include "pilrecon/geometry.hpp"
#include "pilrecon/raster.hpp"

namespace pilrecon {

// Binary P5 graymaps.
//   filament:   8-bit, 0 = no filament, 255 = filament
//   polarity:   8-bit, 0 = -1, 128 = 0 (PIL/unknown), 255 = +1
//   confidence: 16-bit big-endian, [-1, 1] mapped linearly onto [0, 65535]

enum class RasterKind { Filament, Polarity, Confidence };

using AnyRaster = std::variant<FilamentMask, PolarityMap, ConfidenceMap>;

FilamentMask decode_filament(std::string_view bytes);
PolarityMap decode_polarity(std::string_view bytes);
ConfidenceMap decode_confidence(std::string_view bytes);

std::string encode(const FilamentMask& mask);
std::string encode(const PolarityMap& map);
std::string encode(const ConfidenceMap& map);

AnyRaster load_raster(const std::filesystem::path& path, RasterKind kind);
FilamentMask load_filament(const std::filesystem::path& path);
PolarityMap load_polarity(const std::filesystem::path& path);
ConfidenceMap load_confidence(const std::filesystem::path& path);

void save_raster(const FilamentMask& mask, const std::filesystem::path& path);
void save_raster(const PolarityMap& map, const std::filesystem::path& path);
void save_raster(const ConfidenceMap& map, const std::filesystem::path& path);

/// Block pooling by an integer factor dividing both dimensions.
/// Filaments use logical OR, polarity uses a plurality vote with ties mapped to 0.
FilamentMask downsample(const FilamentMask& mask, int factor);
PolarityMap downsample(const PolarityMap& map, int factor);

/// `row col polarity` lines, `#` starts a comment.
ReferencePointSet parse_reference_points(std::string_view text);
std::string format_reference_points(const ReferencePointSet& refs);
ReferencePointSet load_reference_points(const std::filesystem::path& path);
void save_reference_points(const ReferencePointSet& refs, const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace pilrecon
