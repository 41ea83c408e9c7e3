#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pilrecon/ensemble.hpp"
#include "pilrecon/geometry.hpp"
#include "pilrecon/loss.hpp"
#include "pilrecon/manifest.hpp"
#include "pilrecon/metrics.hpp"
#include "pilrecon/synthgen.hpp"
#include "pilrecon/trainer.hpp"

namespace pilrecon {

/// Writes target.pgm, pil.pgm and filaments.pgm into `outdir`; returns the generated world.
SynthWorld write_synthetic(const SynthSpec& spec, const std::filesystem::path& outdir);

/// Dominant target sign in each pole band; ties resolve to +1 north / -1 south.
Poles poles_from_target(const PolarityMap& target, const GridSpec& spec);

struct ReconstructOptions {
    std::string map_id = "map";
    std::filesystem::path filaments;
    std::optional<std::filesystem::path> target;
    std::optional<std::filesystem::path> pil;
    std::optional<std::filesystem::path> refs_file;
    int grid_step = 0;  ///< 0: no grid reference points
    std::optional<Poles> poles;  ///< empty: derived from the target
    int downsample = 1;
    std::optional<int> gap_px;  ///< empty: width / 64
    LatitudeMode latitude_mode = LatitudeMode::EqualAngle;
    Embedding embedding = Embedding::Cylinder;
    double z_half_height = 1.0;
    LossWeights weights;
    TrainConfig train;
    std::size_t members = 8;
    std::uint64_t base_seed = 0;
    Strategy strategy = Strategy::MeanThenBinarize;
    bool both_strategies = false;
    /// Directory holding member_XXX.params used to initialise member XXX.
    std::optional<std::filesystem::path> warm_start_dir;
    std::size_t jobs = 1;
    std::filesystem::path outdir;
};

struct ReconstructOutcome {
    GridSpec grid;
    EnsembleResult ensemble;
    std::vector<TrainedModel> members;
    std::optional<ErrorReport> error;            ///< of the configured strategy
    std::optional<ErrorReport> alternate_error;  ///< of the other strategy, when both are scored
    PixelCounts counts;
    RunManifest manifest;
};

/// Loads inputs, trains the ensemble, aggregates, scores, and writes the ensemble directory:
/// member_XXX.params, member_XXX.conf.pgm, member_XXX.history, mean.conf.pgm, binarized.pgm,
/// report.txt, refs.txt, manifest.
ReconstructOutcome run_reconstruct(const ReconstructOptions& options,
                                   const MemberProgress& progress = {});

/// Configuration entries describing `options` (everything that determines the outputs).
RunManifest manifest_for(const ReconstructOptions& options);

/// Rebuilds options from a manifest. Input files are checked against their recorded hashes.
ReconstructOptions options_from_manifest(const RunManifest& manifest,
                                         const std::filesystem::path& outdir);

struct BatchEntry {
    std::string map_id;
    std::filesystem::path filaments;
    std::optional<std::filesystem::path> target;
    std::optional<std::filesystem::path> pil;
};

/// `map_id filaments [target [pil]]` per line, `#` comments, paths relative to `base_dir`.
std::vector<BatchEntry> parse_map_list(std::string_view text,
                                       const std::filesystem::path& base_dir);

struct BatchRow {
    std::string map_id;
    std::optional<ErrorReport> error;
    PixelCounts counts;
    std::optional<std::string> failure;
    std::optional<std::string> donor;  ///< map whose weights initialised this one
};

struct BatchOutcome {
    std::vector<BatchRow> rows;
    std::size_t failures = 0;
    std::optional<double> mean_e_total;
    std::optional<double> mean_e_band;
    std::optional<double> ratio_error_correlation;
    std::string summary;  ///< contents of summary.txt
};

/// Runs `shared` on every map in the list; each map writes into outdir/<map_id>. Failures are
/// recorded and the batch continues. With `warm_chain`, map i starts from map i-1's members.
BatchOutcome run_batch(const std::filesystem::path& list_file, const ReconstructOptions& shared,
                       bool warm_chain, const std::filesystem::path& outdir);

}  // namespace pilrecon
