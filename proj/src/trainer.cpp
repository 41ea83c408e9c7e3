#include "pilrecon/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "pilrecon/rng.hpp"

namespace pilrecon {
namespace {

constexpr std::size_t kMinStratumSample = 16;

void gather_into(const Points& all, const std::vector<std::size_t>& pixels, Points& out) {
    out.resize(3, static_cast<Eigen::Index>(pixels.size()));
    for (std::size_t k = 0; k < pixels.size(); ++k) {
        out.col(static_cast<Eigen::Index>(k)) = all.col(static_cast<Eigen::Index>(pixels[k]));
    }
}

Points gather(const Points& all, const std::vector<std::size_t>& pixels) {
    Points out;
    gather_into(all, pixels, out);
    return out;
}

std::string describe(const LossBreakdown& b) {
    std::ostringstream os;
    os << "T1=" << b.t1 << " T2=" << b.t2 << " T3=" << b.t3 << " T4=" << b.t4 << " T5=" << b.t5
       << " Tref=" << b.tref << " total=" << b.total;
    return os.str();
}

LossBreakdown non_finite() {
    LossBreakdown b;
    b.total = std::numeric_limits<double>::quiet_NaN();
    return b;
}

LossBreakdown loss_and_gradient(const MlpParams& params, const Points& points,
                                const PixelPartition& partition, const LossWeights& weights,
                                ForwardTrace& trace, MlpParams& grads) {
    if (weights.gradient_norm == 0.0) {
        trace.run(params, points);
        if (!trace.values().allFinite()) {
            return non_finite();
        }
        const LossResult r = evaluate_loss(trace.values(), partition, weights);
        if (r.breakdown.finite()) {
            trace.backward(r.df, grads);
        }
        return r.breakdown;
    }
    const Eigen::VectorXd f = forward(params, points);
    if (!f.allFinite()) {
        return non_finite();
    }
    const Points fil_points = gather(points, partition.filament.indices);
    const Points fil_grads = spatial_gradient(params, fil_points);
    LossResult r = evaluate_loss(f, partition, weights, &fil_grads);
    if (!r.breakdown.finite()) {
        return r.breakdown;
    }
    Points upstream_grad = Points::Zero(3, points.cols());
    for (std::size_t k = 0; k < partition.filament.indices.size(); ++k) {
        upstream_grad.col(static_cast<Eigen::Index>(partition.filament.indices[k])) +=
            r.dgrad.col(static_cast<Eigen::Index>(k));
    }
    grads = backward_with_spatial(params, points, r.df, upstream_grad);
    return r.breakdown;
}

}  // namespace

TrainConfig TrainConfig::interactive() {
    TrainConfig c;
    c.iterations = 3000;
    c.batch_size = 8192;
    c.plateau = PlateauStop{};
    return c;
}

void TrainConfig::validate() const {
    if (iterations < 0) {
        throw DomainError("iterations must be >= 0");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw DomainError("learning rate must be positive");
    }
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
        throw DomainError("weight decay must be non-negative");
    }
    if (record_every < 1) {
        throw DomainError("record_every must be >= 1");
    }
    if (plateau && (plateau->window < 1 || !(plateau->tolerance >= 0.0))) {
        throw DomainError("plateau window must be >= 1 and tolerance >= 0");
    }
    architecture.validate();
    if (warm_start && !(warm_start->spec() == architecture)) {
        throw SizeError("warm-start snapshot architecture does not match the configured net");
    }
}

void TrainProblem::validate() const {
    grid.validate();
    if (!filaments.same_shape(grid.height, grid.width)) {
        throw SizeError("filament mask " + std::to_string(filaments.height()) + "x" +
                        std::to_string(filaments.width()) + " does not match grid " +
                        std::to_string(grid.height) + "x" + std::to_string(grid.width));
    }
    refs.validate(grid);
    weights.validate();
}

MiniBatch sample_batch(const PixelPartition& full, std::size_t pixel_count,
                       std::size_t batch_size, Rng& rng) {
    MiniBatch mb;
    auto take = [&](const Stratum& src, Stratum& dst) {
        dst.mass = src.mass;
        if (src.indices.empty()) {
            return;
        }
        const std::size_t share = static_cast<std::size_t>(std::llround(
            static_cast<double>(batch_size) * static_cast<double>(src.indices.size()) /
            static_cast<double>(pixel_count)));
        const std::size_t n =
            std::max(share, std::min(kMinStratumSample, src.indices.size()));
        for (std::size_t k = 0; k < n; ++k) {
            const auto pick = rng.uniform_int(0, src.indices.size() - 1);
            dst.indices.push_back(mb.pixels.size());
            if (!src.weights.empty()) {
                dst.weights.push_back(src.weights[pick]);
            }
            mb.pixels.push_back(src.indices[pick]);
        }
    };
    take(full.filament, mb.partition.filament);
    take(full.non_filament, mb.partition.non_filament);
    take(full.north, mb.partition.north);
    take(full.south, mb.partition.south);
    mb.partition.pole_north = full.pole_north;
    mb.partition.pole_south = full.pole_south;
    for (std::size_t k = 0; k < full.ref_indices.size(); ++k) {
        mb.partition.ref_indices.push_back(mb.pixels.size());
        mb.partition.ref_polarities.push_back(full.ref_polarities[k]);
        mb.pixels.push_back(full.ref_indices[k]);
    }
    return mb;
}

LossBreakdown evaluate_model(const MlpParams& params, const TrainProblem& problem,
                             bool cos_latitude) {
    problem.validate();
    const Points points = embed_all(problem.grid);
    const PixelPartition partition =
        make_partition(problem.filaments, problem.grid, problem.refs, problem.poles, cos_latitude);
    const Eigen::VectorXd f = forward(params, points);
    if (!f.allFinite()) {
        return non_finite();
    }
    if (problem.weights.gradient_norm == 0.0) {
        return evaluate_loss(f, partition, problem.weights).breakdown;
    }
    const Points grads = spatial_gradient(params, gather(points, partition.filament.indices));
    return evaluate_loss(f, partition, problem.weights, &grads).breakdown;
}

TrainedModel train_single(const TrainProblem& problem, const TrainConfig& config,
                          const ProgressCallback& progress) {
    problem.validate();
    config.validate();

    const Points all_points = embed_all(problem.grid);
    const PixelPartition full = make_partition(problem.filaments, problem.grid, problem.refs,
                                               problem.poles, config.cos_latitude_weighting);
    const std::size_t pixel_count = problem.grid.pixel_count();
    const bool mini = config.batch_size > 0 && config.batch_size < pixel_count;

    TrainedModel model;
    model.config = config;
    model.params = config.warm_start ? *config.warm_start
                                     : init_params(config.architecture, config.seed);
    AdamState state = AdamState::zeros_like(model.params);
    AdamConfig adam;
    adam.learning_rate = config.learning_rate;
    adam.weight_decay = config.weight_decay;
    adam.decoupled_weight_decay = config.decoupled_weight_decay;
    Rng rng(config.seed, 0xBA7C);

    ForwardTrace trace;
    MlpParams grads(model.params.spec());
    Points batch_points;
    LossBreakdown loss;
    int it = 0;
    for (; it < config.iterations; ++it) {
        if (!mini) {
            loss = loss_and_gradient(model.params, all_points, full, problem.weights, trace,
                                          grads);
        } else {
            const MiniBatch mb = sample_batch(full, pixel_count, config.batch_size, rng);
            gather_into(all_points, mb.pixels, batch_points);
            loss = loss_and_gradient(model.params, batch_points, mb.partition,
                                          problem.weights, trace, grads);
        }
        if (!loss.finite()) {
            throw NumericError("non-finite loss at iteration " + std::to_string(it) + ": " +
                               describe(loss));
        }
        if (it % config.record_every == 0) {
            model.history.push_back({it, loss});
            if (progress && !progress(it, config.iterations, loss)) {
                throw CancelledError("training cancelled at iteration " + std::to_string(it));
            }
            if (config.plateau && it >= config.plateau->window) {
                const int past = it - config.plateau->window;
                const auto old = std::find_if(model.history.begin(), model.history.end(),
                                              [&](const HistoryEntry& h) { return h.iteration == past; });
                if (old != model.history.end()) {
                    const double before = old->loss.total;
                    const double gain = (before - loss.total) / std::max(std::abs(before), 1e-12);
                    if (gain < config.plateau->tolerance) {
                        model.stopped_on_plateau = true;
                        break;
                    }
                }
            }
        }
        try {
            adam_step(model.params, grads, state, adam);
        } catch (const NumericError& e) {
            throw NumericError("iteration " + std::to_string(it) + ": " + e.what() + "; " +
                               describe(loss));
        }
    }
    model.iterations_run = it;
    model.final_breakdown = evaluate_model(model.params, problem, config.cos_latitude_weighting);
    if (!model.final_breakdown.finite()) {
        throw NumericError("non-finite final loss: " + describe(model.final_breakdown));
    }
    if (!model.history.empty() && model.history.back().iteration == it) {
        model.history.back().loss = model.final_breakdown;
    } else {
        model.history.push_back({it, model.final_breakdown});
    }
    if (progress) {
        progress(it, config.iterations, model.final_breakdown);
    }
    return model;
}

ConfidenceMap predict_map(const MlpParams& params, const GridSpec& spec) {
    const Eigen::VectorXd f = forward(params, embed_all(spec));
    ConfidenceMap map(spec.height, spec.width, 0.0);
    for (std::size_t i = 0; i < map.size(); ++i) {
        map[i] = f[static_cast<Eigen::Index>(i)];
    }
    return map;
}

std::string format_history(const std::vector<HistoryEntry>& history) {
    std::ostringstream os;
    os.precision(17);
    os << "# iter T1 T2 T3 T4 T5 Tref total\n";
    for (const auto& h : history) {
        os << h.iteration << ' ' << h.loss.t1 << ' ' << h.loss.t2 << ' ' << h.loss.t3 << ' '
           << h.loss.t4 << ' ' << h.loss.t5 << ' ' << h.loss.tref << ' ' << h.loss.total << '\n';
    }
    return os.str();
}

}  // namespace pilrecon
