#include "pilrecon/loss.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace pilrecon {
namespace {

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double weight_sum(const Stratum& s) {
    if (s.weights.empty()) {
        return static_cast<double>(s.indices.size());
    }
    double w = 0.0;
    for (double x : s.weights) {
        w += x;
    }
    return w;
}

Stratum stratum_from(std::vector<std::size_t> indices, const std::vector<double>* pixel_weights) {
    Stratum s;
    s.indices = std::move(indices);
    if (pixel_weights != nullptr) {
        s.weights.reserve(s.indices.size());
        for (auto i : s.indices) {
            s.weights.push_back((*pixel_weights)[i]);
        }
    }
    s.mass = weight_sum(s);
    return s;
}

}  // namespace

void LossWeights::validate() const {
    for (double w : {neutrality, filament, bipolarity, pole, gradient_norm, reference}) {
        if (!(w >= 0.0) || !std::isfinite(w)) {
            throw DomainError("loss weights must be finite and non-negative");
        }
    }
}

bool LossBreakdown::finite() const {
    return std::isfinite(t1) && std::isfinite(t2) && std::isfinite(t3) && std::isfinite(t4) &&
           std::isfinite(t5) && std::isfinite(tref) && std::isfinite(total);
}

PixelPartition make_partition(const FilamentMask& filaments, const GridSpec& spec,
                              const ReferencePointSet& refs, Poles poles, bool cos_latitude) {
    spec.validate();
    if (!filaments.same_shape(spec.height, spec.width)) {
        throw SizeError("filament mask does not match grid " + std::to_string(spec.height) + "x" +
                        std::to_string(spec.width));
    }
    if ((poles.north != 1 && poles.north != -1) || (poles.south != 1 && poles.south != -1)) {
        throw DomainError("pole polarities must be -1 or 1");
    }
    refs.validate(spec);

    std::vector<double> pixel_weights;
    if (cos_latitude) {
        pixel_weights.resize(spec.pixel_count());
        for (int r = 0; r < spec.height; ++r) {
            const double w = std::cos(latitude_of_row(spec, r) * std::numbers::pi / 180.0);
            for (int c = 0; c < spec.width; ++c) {
                pixel_weights[static_cast<std::size_t>(r) * spec.width + c] = w;
            }
        }
    }
    const auto* pw = cos_latitude ? &pixel_weights : nullptr;

    std::vector<std::size_t> fil;
    std::vector<std::size_t> rest;
    std::vector<std::size_t> north;
    std::vector<std::size_t> south;
    for (int r = 0; r < spec.height; ++r) {
        const double lat = latitude_of_row(spec, r);
        for (int c = 0; c < spec.width; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * spec.width + c;
            (filaments[i] ? fil : rest).push_back(i);
            if (lat > kPoleBandDeg) {
                north.push_back(i);
            } else if (lat < -kPoleBandDeg) {
                south.push_back(i);
            }
        }
    }
    PixelPartition p;
    p.filament = stratum_from(std::move(fil), pw);
    p.non_filament = stratum_from(std::move(rest), pw);
    p.north = stratum_from(std::move(north), pw);
    p.south = stratum_from(std::move(south), pw);
    p.pole_north = poles.north;
    p.pole_south = poles.south;
    for (const auto& ref : refs.points) {
        p.ref_indices.push_back(static_cast<std::size_t>(ref.row) * spec.width + ref.col);
        p.ref_polarities.push_back(ref.polarity);
    }
    return p;
}

LossResult evaluate_loss(const Eigen::VectorXd& f, const PixelPartition& partition,
                         const LossWeights& weights, const Points* filament_grads) {
    weights.validate();
    for (Eigen::Index i = 0; i < f.size(); ++i) {
        if (!(f[i] >= -1.0 && f[i] <= 1.0)) {
            throw DomainError("f value " + std::to_string(f[i]) + " at entry " +
                              std::to_string(i) + " outside [-1, 1]");
        }
    }
    const bool use_grad = weights.gradient_norm != 0.0;
    if (use_grad && (filament_grads == nullptr ||
                     filament_grads->cols() !=
                         static_cast<Eigen::Index>(partition.filament.indices.size()))) {
        throw SizeError("gradient-norm term needs one spatial gradient per filament entry");
    }

    LossResult out;
    out.df = Eigen::VectorXd::Zero(f.size());
    auto& b = out.breakdown;
    const Stratum& fil = partition.filament;
    const Stratum& rest = partition.non_filament;

    // T1: |sum_C f| / |C| as the mass-weighted combination of the two stratum means.
    {
        const double total_mass = fil.mass + rest.mass;
        double signed_sum = 0.0;
        for (const Stratum* s : {&fil, &rest}) {
            const double w = weight_sum(*s);
            if (w <= 0.0) {
                continue;
            }
            double acc = 0.0;
            for (std::size_t k = 0; k < s->indices.size(); ++k) {
                acc += s->weight(k) * f[static_cast<Eigen::Index>(s->indices[k])];
            }
            signed_sum += s->mass * acc / w;
        }
        if (total_mass > 0.0) {
            b.t1 = std::abs(signed_sum) / total_mass;
            const double sgn = sign0(signed_sum);
            for (const Stratum* s : {&fil, &rest}) {
                const double w = weight_sum(*s);
                if (w <= 0.0 || sgn == 0.0) {
                    continue;
                }
                const double scale = weights.neutrality * sgn * s->mass / (w * total_mass);
                for (std::size_t k = 0; k < s->indices.size(); ++k) {
                    out.df[static_cast<Eigen::Index>(s->indices[k])] += scale * s->weight(k);
                }
            }
        }
    }

    // T2: mean f^2 on filaments.
    if (const double w = weight_sum(fil); w > 0.0) {
        double acc = 0.0;
        for (std::size_t k = 0; k < fil.indices.size(); ++k) {
            const double v = f[static_cast<Eigen::Index>(fil.indices[k])];
            acc += fil.weight(k) * v * v;
            out.df[static_cast<Eigen::Index>(fil.indices[k])] +=
                weights.filament * 2.0 * fil.weight(k) * v / w;
        }
        b.t2 = acc / w;
    }

    // T3: mean |f| off filaments, subtracted from the total.
    if (const double w = weight_sum(rest); w > 0.0) {
        double acc = 0.0;
        for (std::size_t k = 0; k < rest.indices.size(); ++k) {
            const double v = f[static_cast<Eigen::Index>(rest.indices[k])];
            acc += rest.weight(k) * std::abs(v);
            out.df[static_cast<Eigen::Index>(rest.indices[k])] -=
                weights.bipolarity * rest.weight(k) * sign0(v) / w;
        }
        b.t3 = acc / w;
    }

    // T4: squared pole-band error, normalized by its maximum 4.
    {
        const double band_mass = partition.north.mass + partition.south.mass;
        if (band_mass > 0.0) {
            double acc = 0.0;
            const std::pair<const Stratum*, int> bands[] = {{&partition.north, partition.pole_north},
                                                            {&partition.south, partition.pole_south}};
            for (const auto& [s, pole] : bands) {
                const double w = weight_sum(*s);
                if (w <= 0.0) {
                    continue;
                }
                double sq = 0.0;
                const double scale = s->mass / (w * 4.0 * band_mass);
                for (std::size_t k = 0; k < s->indices.size(); ++k) {
                    const double d = f[static_cast<Eigen::Index>(s->indices[k])] - pole;
                    sq += s->weight(k) * d * d;
                    out.df[static_cast<Eigen::Index>(s->indices[k])] +=
                        weights.pole * scale * 2.0 * s->weight(k) * d;
                }
                acc += scale * sq;
            }
            b.t4 = acc;
        }
    }

    // T5: mean |grad f|^2 on filaments, subtracted (the term is maximized).
    if (filament_grads != nullptr &&
        filament_grads->cols() == static_cast<Eigen::Index>(fil.indices.size())) {
        if (const double w = weight_sum(fil); w > 0.0) {
            double acc = 0.0;
            out.dgrad = Points::Zero(3, filament_grads->cols());
            for (std::size_t k = 0; k < fil.indices.size(); ++k) {
                const auto col = static_cast<Eigen::Index>(k);
                acc += fil.weight(k) * filament_grads->col(col).squaredNorm();
                out.dgrad.col(col) =
                    -weights.gradient_norm * 2.0 * fil.weight(k) / w * filament_grads->col(col);
            }
            b.t5 = acc / w;
        }
    }

    // Tref: mean squared error at the reference points.
    if (!partition.ref_indices.empty()) {
        const double n = static_cast<double>(partition.ref_indices.size());
        double acc = 0.0;
        for (std::size_t k = 0; k < partition.ref_indices.size(); ++k) {
            const auto idx = static_cast<Eigen::Index>(partition.ref_indices[k]);
            const double d = f[idx] - partition.ref_polarities[k];
            acc += d * d;
            out.df[idx] += weights.reference * 2.0 * d / n;
        }
        b.tref = acc / n;
    }

    b.total = weights.neutrality * b.t1 + weights.filament * b.t2 - weights.bipolarity * b.t3 +
              weights.pole * b.t4 - weights.gradient_norm * b.t5 + weights.reference * b.tref;
    return out;
}

}  // namespace pilrecon
