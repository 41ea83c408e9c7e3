#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pilrecon/geometry.hpp"
#include "pilrecon/loss.hpp"
#include "pilrecon/net.hpp"
#include "pilrecon/raster.hpp"
#include "pilrecon/rng.hpp"

namespace pilrecon {

/// Stop once the total loss improved by less than `tolerance` (relative) over `window` iterations.
struct PlateauStop {
    int window = 2000;
    double tolerance = 1e-4;
};

struct TrainConfig {
    int iterations = 30000;
    double learning_rate = 5e-3;
    double weight_decay = 1e-4;
    bool decoupled_weight_decay = false;
    /// 0 trains on every pixel each step.
    std::size_t batch_size = 0;
    std::uint64_t seed = 0;
    std::optional<MlpParams> warm_start;
    int record_every = 100;
    bool determinism = true;
    std::optional<PlateauStop> plateau;
    MlpSpec architecture = MlpSpec::standard();
    bool cos_latitude_weighting = false;

    /// Working resolution 64x128, batch 8192, 3000 iterations, plateau stop on.
    static TrainConfig interactive();

    void validate() const;
};

/// Everything a training run needs besides its configuration.
struct TrainProblem {
    FilamentMask filaments;
    GridSpec grid;
    ReferencePointSet refs;
    Poles poles;
    LossWeights weights;

    void validate() const;
};

struct HistoryEntry {
    int iteration = 0;
    LossBreakdown loss;
};

struct TrainedModel {
    MlpParams params;
    LossBreakdown final_breakdown;
    std::vector<HistoryEntry> history;
    TrainConfig config;
    int iterations_run = 0;
    bool stopped_on_plateau = false;
};

/// Called at every recorded iteration; returning false cancels the run.
using ProgressCallback = std::function<bool(int iteration, int total, const LossBreakdown&)>;

class CancelledError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

TrainedModel train_single(const TrainProblem& problem, const TrainConfig& config,
                          const ProgressCallback& progress = {});

ConfidenceMap predict_map(const MlpParams& params, const GridSpec& spec);

/// Full-batch loss of `params` on `problem`.
LossBreakdown evaluate_model(const MlpParams& params, const TrainProblem& problem,
                             bool cos_latitude = false);

/// Draws one stratified mini-batch: every stratum sampled with replacement in proportion to
/// its size (at least min(16, size) entries), reference points always included. Returns the
/// pixel index of each batch entry and the partition over batch positions.
struct MiniBatch {
    std::vector<std::size_t> pixels;
    PixelPartition partition;
};
MiniBatch sample_batch(const PixelPartition& full, std::size_t pixel_count,
                       std::size_t batch_size, Rng& rng);

/// `iter T1 T2 T3 T4 T5 Tref total` lines.
std::string format_history(const std::vector<HistoryEntry>& history);

}  // namespace pilrecon
