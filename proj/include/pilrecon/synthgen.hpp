#pragma once

#include <cstdint>
#include <vector>

#include "pilrecon/raster.hpp"

namespace pilrecon {

/// One separable mode a * cos(m*phi + psi) * cos(n*pi*z/2 + chi) on the unrolled cylinder.
struct Harmonic {
    double amplitude = 1.0;
    int m = 1;
    double psi = 0.0;
    int n = 0;
    double chi = 0.0;
};

struct SynthSpec {
    int height = 64;
    int width = 128;
    int harmonics = 3;
    int max_wavenumber = 2;
    double fragment_fraction = 0.6;
    std::uint64_t seed = 0;
    double mean_run_length = 20.0;
    /// Adds opposite-sign unipolar caps poleward of `cap_start_deg`, saturating at
    /// `cap_full_deg`, so the pole bands carry a single polarity as on the Sun.
    /// Rows are taken as equal-angle latitudes.
    bool polar_caps = true;
    double cap_start_deg = 70.0;
    double cap_full_deg = 80.0;

    void validate() const;
};

/// A synthetic ground-truth world: a smooth sign field, its inversion lines, and partial
/// filament fragments lying on those lines.
struct SynthWorld {
    std::vector<Harmonic> modes;
    int north_cap = 0;  ///< sign of the northern cap, 0 without caps
    int south_cap = 0;
    std::vector<double> field;  ///< g at every pixel, row-major
    PolarityMap target;
    FilamentMask pil;
    FilamentMask filaments;
};

std::vector<Harmonic> random_harmonics(const SynthSpec& spec);

SynthWorld generate(const SynthSpec& spec);

/// Builds a world from explicit modes; `spec.harmonics` and `spec.max_wavenumber` are ignored.
SynthWorld generate(const SynthSpec& spec, const std::vector<Harmonic>& modes);

/// Pixels next to a sign change of `field` (4-neighbourhood, longitude wraps). Of each
/// straddling pair only the pixel with the smaller |field| is marked.
FilamentMask inversion_pixels(const std::vector<double>& field, int height, int width);

/// Orders mask pixels by a greedy walk through 8-connected neighbours (longitude wraps).
std::vector<std::size_t> greedy_walk(const FilamentMask& mask);

}  // namespace pilrecon
