#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "pilrecon/geometry.hpp"
#include "pilrecon/raster.hpp"

namespace pilrecon {

struct ErrorReport {
    double e_total = 0.0;  ///< mismatch fraction over the whole map
    double e_band = 0.0;   ///< mismatch fraction within +-40 degrees latitude
    std::size_t evaluated_total = 0;
    std::size_t evaluated_band = 0;
};

/// Target pixels equal to 0 are excluded from numerator and denominator.
ErrorReport error_fractions(const PolarityMap& pred, const PolarityMap& target,
                            const GridSpec& spec);

struct PixelCounts {
    std::size_t n_filament = 0;
    std::size_t n_pil = 0;
    std::optional<double> ratio;  ///< empty when n_pil == 0
};

PixelCounts pixel_counts(const FilamentMask& filaments, const FilamentMask& pil);

/// Sample Pearson correlation; empty when either series is constant.
std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys);

/// PIL pixels of a polarity map: pixels valued 0, plus the first pixel of every right or
/// down neighbour pair with opposite signs (longitude wraps).
FilamentMask pil_from_polarity(const PolarityMap& map);

/// One `map_id e_total e_band n_filament n_pil ratio` row; undefined values print as NA.
std::string format_report_row(const std::string& map_id, const std::optional<ErrorReport>& err,
                              const PixelCounts& counts);
inline constexpr const char* kReportHeader = "# map_id e_total e_band n_filament n_pil ratio";

}  // namespace pilrecon
