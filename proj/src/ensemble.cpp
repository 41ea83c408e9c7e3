#include "pilrecon/ensemble.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

namespace pilrecon {
namespace {

void check_members(const std::vector<ConfidenceMap>& members) {
    if (members.empty()) {
        throw SizeError("aggregation needs at least one member");
    }
    for (const auto& m : members) {
        require_same_shape(m, members.front(), "ensemble member");
    }
}

}  // namespace

std::string to_string(Strategy s) {
    return s == Strategy::MeanThenBinarize ? "mean" : "majority";
}

Strategy parse_strategy(const std::string& text) {
    if (text == "mean") {
        return Strategy::MeanThenBinarize;
    }
    if (text == "majority") {
        return Strategy::BinarizeThenMajority;
    }
    throw DomainError("unknown aggregation strategy '" + text + "'");
}

std::vector<TrainedModel> train_ensemble(const TrainProblem& problem, const TrainConfig& config,
                                         const EnsembleOptions& options,
                                         const MemberProgress& progress) {
    if (options.members < 1) {
        throw DomainError("ensemble needs at least one member");
    }
    if (!options.warm_starts.empty() && options.warm_starts.size() != options.members) {
        throw SizeError("warm-start list must have one entry per member");
    }
    problem.validate();

    std::vector<std::optional<TrainedModel>> results(options.members);
    std::vector<std::exception_ptr> errors(options.members);
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};

    auto worker = [&] {
        for (;;) {
            const std::size_t k = next.fetch_add(1);
            if (k >= options.members || failed.load()) {
                return;
            }
            try {
                TrainConfig member_config = config;
                member_config.seed = member_seed(options.base_seed, k);
                if (!options.warm_starts.empty() && options.warm_starts[k]) {
                    member_config.warm_start = options.warm_starts[k];
                }
                ProgressCallback cb;
                if (progress) {
                    cb = [&, k](int it, int total, const LossBreakdown& b) {
                        return progress(k, it, total, b);
                    };
                }
                results[k] = train_single(problem, member_config, cb);
            } catch (...) {
                errors[k] = std::current_exception();
                failed.store(true);
            }
        }
    };

    const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, options.members));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t j = 0; j < jobs; ++j) {
            pool.emplace_back(worker);
        }
        for (auto& t : pool) {
            t.join();
        }
    }

    for (std::size_t k = 0; k < options.members; ++k) {
        if (errors[k]) {
            try {
                std::rethrow_exception(errors[k]);
            } catch (const CancelledError&) {
                throw;
            } catch (const NumericError& e) {
                throw MemberError(k, e.what(), true);
            } catch (const std::exception& e) {
                throw MemberError(k, e.what(), false);
            }
        }
    }
    std::vector<TrainedModel> out;
    out.reserve(options.members);
    for (auto& r : results) {
        out.push_back(std::move(*r));
    }
    return out;
}

std::vector<ConfidenceMap> member_maps(const std::vector<TrainedModel>& members,
                                       const GridSpec& spec) {
    std::vector<ConfidenceMap> maps;
    maps.reserve(members.size());
    for (const auto& m : members) {
        maps.push_back(predict_map(m.params, spec));
    }
    return maps;
}

MeanAggregate aggregate_mean(const std::vector<ConfidenceMap>& members) {
    check_members(members);
    const auto& first = members.front();
    MeanAggregate out{ConfidenceMap(first.height(), first.width(), 0.0),
                      PolarityMap(first.height(), first.width(), 1)};
    const double n = static_cast<double>(members.size());
    for (std::size_t i = 0; i < first.size(); ++i) {
        double sum = 0.0;
        for (const auto& m : members) {
            sum += m[i];
        }
        const double mean = sum / n;
        out.mean_map[i] = mean;
        out.binarized[i] = static_cast<std::int8_t>(mean < 0.0 ? -1 : 1);
    }
    return out;
}

PolarityMap aggregate_majority(const std::vector<ConfidenceMap>& members) {
    check_members(members);
    const auto& first = members.front();
    PolarityMap out(first.height(), first.width(), 1);
    for (std::size_t i = 0; i < first.size(); ++i) {
        long votes = 0;
        for (const auto& m : members) {
            votes += m[i] < 0.0 ? -1 : 1;
        }
        out[i] = static_cast<std::int8_t>(votes < 0 ? -1 : 1);
    }
    return out;
}

EnsembleResult aggregate(std::vector<ConfidenceMap> members, Strategy strategy) {
    MeanAggregate mean = aggregate_mean(members);
    EnsembleResult r;
    r.strategy = strategy;
    r.mean_map = std::move(mean.mean_map);
    r.binarized = strategy == Strategy::MeanThenBinarize ? std::move(mean.binarized)
                                                         : aggregate_majority(members);
    r.member_maps = std::move(members);
    return r;
}

}  // namespace pilrecon
