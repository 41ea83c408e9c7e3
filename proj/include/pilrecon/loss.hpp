#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "pilrecon/geometry.hpp"
#include "pilrecon/raster.hpp"

namespace pilrecon {

/// User multipliers on the normalized terms.
struct LossWeights {
    double neutrality = 1.0;     ///< T1
    double filament = 1.0;       ///< T2
    double bipolarity = 1.0;     ///< T3 (subtracted)
    double pole = 1.0;           ///< T4
    double gradient_norm = 0.0;  ///< T5 (subtracted)
    double reference = 1.0;      ///< Tref

    void validate() const;
};

struct LossBreakdown {
    double t1 = 0.0;  ///< |mean f| over the whole map
    double t2 = 0.0;  ///< mean f^2 over filament pixels
    double t3 = 0.0;  ///< mean |f| over non-filament pixels
    double t4 = 0.0;  ///< pole-band squared error / 4
    double t5 = 0.0;  ///< mean |grad f|^2 over filament pixels
    double tref = 0.0;
    double total = 0.0;

    bool finite() const;
};

/// A set of entries of the f array standing for a population of pixels. `mass` is the
/// population's total weight; the entries estimate the population mean. In a full-batch
/// partition the indices are the population itself.
struct Stratum {
    std::vector<std::size_t> indices;
    std::vector<double> weights;  ///< empty means unit weights
    double mass = 0.0;

    bool empty() const { return indices.empty(); }
    double weight(std::size_t k) const { return weights.empty() ? 1.0 : weights[k]; }
};

struct PixelPartition {
    Stratum filament;
    Stratum non_filament;
    Stratum north;
    Stratum south;
    int pole_north = 1;
    int pole_south = -1;
    std::vector<std::size_t> ref_indices;
    std::vector<int> ref_polarities;
};

struct Poles {
    int north = 1;
    int south = -1;
};

/// Full-batch partition over every pixel of `spec`; refs index pixels as row*width+col.
/// With `cos_latitude` each pixel is weighted by the cosine of its latitude.
PixelPartition make_partition(const FilamentMask& filaments, const GridSpec& spec,
                              const ReferencePointSet& refs, Poles poles,
                              bool cos_latitude = false);

struct LossResult {
    LossBreakdown breakdown;
    Eigen::VectorXd df;         ///< d total / d f for every entry of f
    Points dgrad;               ///< d total / d grad f, one column per filament entry (empty if unused)
};

/// Evaluates every term over `f` (values in [-1, 1]). `filament_grads` holds grad f at the
/// filament entries, in the order of partition.filament.indices; required when the
/// gradient-norm weight is non-zero.
LossResult evaluate_loss(const Eigen::VectorXd& f, const PixelPartition& partition,
                         const LossWeights& weights,
                         const Points* filament_grads = nullptr);

}  // namespace pilrecon
