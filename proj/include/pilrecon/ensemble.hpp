#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pilrecon/raster.hpp"
#include "pilrecon/trainer.hpp"

namespace pilrecon {

enum class Strategy { MeanThenBinarize, BinarizeThenMajority };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& text);

struct EnsembleResult {
    std::vector<ConfidenceMap> member_maps;
    ConfidenceMap mean_map;
    PolarityMap binarized;  ///< values in {-1, +1}
    Strategy strategy = Strategy::MeanThenBinarize;
};

/// Member k trains with seed base_seed XOR k.
inline std::uint64_t member_seed(std::uint64_t base_seed, std::size_t k) {
    return base_seed ^ static_cast<std::uint64_t>(k);
}

class MemberError : public std::runtime_error {
public:
    MemberError(std::size_t member, const std::string& what, bool numeric)
        : std::runtime_error("ensemble member " + std::to_string(member) + ": " + what),
          member_(member),
          numeric_(numeric) {}
    std::size_t member() const { return member_; }
    /// True when the member aborted on a non-finite loss or gradient.
    bool numeric() const { return numeric_; }

private:
    std::size_t member_;
    bool numeric_;
};

struct EnsembleOptions {
    std::size_t members = 1;
    std::uint64_t base_seed = 0;
    /// Worker threads; members are independent so results do not depend on this.
    std::size_t jobs = 1;
    /// Optional per-member initial parameters (warm start), indexed by member.
    std::vector<std::optional<MlpParams>> warm_starts;
};

using MemberProgress =
    std::function<bool(std::size_t member, int iteration, int total, const LossBreakdown&)>;

/// Trains the members; output order is member order regardless of scheduling.
std::vector<TrainedModel> train_ensemble(const TrainProblem& problem, const TrainConfig& config,
                                         const EnsembleOptions& options,
                                         const MemberProgress& progress = {});

std::vector<ConfidenceMap> member_maps(const std::vector<TrainedModel>& members,
                                       const GridSpec& spec);

/// Per-pixel mean, then sign with sign(0) = +1.
struct MeanAggregate {
    ConfidenceMap mean_map;
    PolarityMap binarized;
};
MeanAggregate aggregate_mean(const std::vector<ConfidenceMap>& members);

/// Per-member sign (0 -> +1), then majority vote; vote ties -> +1.
PolarityMap aggregate_majority(const std::vector<ConfidenceMap>& members);

EnsembleResult aggregate(std::vector<ConfidenceMap> members, Strategy strategy);

}  // namespace pilrecon
