#include "pilrecon/net.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>

#include "pilrecon/raster_io.hpp"
#include "pilrecon/rng.hpp"

namespace pilrecon {
namespace {

using Eigen::MatrixXd;

constexpr char kMagic[8] = {'P', 'I', 'L', 'R', 'M', 'L', 'P', '1'};

void check_points(const Points& points) {
    if (!points.allFinite()) {
        for (Eigen::Index i = 0; i < points.cols(); ++i) {
            if (!points.col(i).allFinite()) {
                throw DomainError("non-finite input coordinate at point " + std::to_string(i));
            }
        }
    }
}

void forward_into(const MlpParams& params, const Points& points, std::vector<MatrixXd>& act) {
    check_points(points);
    const std::size_t layers = params.layer_count();
    act.resize(layers + 1);
    act[0] = points;
    for (std::size_t l = 0; l < layers; ++l) {
        MatrixXd& z = act[l + 1];
        z.resize(params.weights(l).rows(), points.cols());
        z.noalias() = params.weights(l) * act[l];
        z.colwise() += params.bias(l);
        tanh_inplace(z);
    }
}

/// Activations of every layer; act[0] holds the inputs.
std::vector<MatrixXd> run_forward(const MlpParams& params, const Points& points) {
    std::vector<MatrixXd> act;
    forward_into(params, points, act);
    return act;
}

MatrixXd tanh_slope(const MatrixXd& a) { return (1.0 - a.array().square()).matrix(); }

void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
    }
}

void append_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
    }
}

std::uint64_t read_le(std::string_view bytes, std::size_t& pos, int width) {
    if (pos + static_cast<std::size_t>(width) > bytes.size()) {
        throw FormatError("truncated parameter snapshot at byte " + std::to_string(pos));
    }
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    }
    pos += static_cast<std::size_t>(width);
    return v;
}

}  // namespace

MlpSpec MlpSpec::standard() { return MlpSpec{{3, 6, 12, 24, 12, 6, 3, 1}}; }

std::size_t param_count(const std::vector<int>& layer_sizes) {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < layer_sizes.size(); ++i) {
        n += static_cast<std::size_t>(layer_sizes[i]) * layer_sizes[i + 1] + layer_sizes[i + 1];
    }
    return n;
}

std::size_t MlpSpec::param_count() const { return pilrecon::param_count(layer_sizes); }

void MlpSpec::validate() const {
    if (layer_sizes.size() < 2) {
        throw SizeError("an MLP needs at least an input and an output layer");
    }
    if (layer_sizes.front() != 3 || layer_sizes.back() != 1) {
        throw SizeError("layer sizes must start with 3 inputs and end with 1 output");
    }
    for (int s : layer_sizes) {
        if (s <= 0) {
            throw SizeError("layer sizes must be positive");
        }
    }
}

MlpParams::MlpParams(MlpSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    values_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec_.param_count()));
    std::size_t offset = 0;
    for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
        offsets_.push_back(offset);
        offset += static_cast<std::size_t>(spec_.layer_sizes[l]) * spec_.layer_sizes[l + 1] +
                  spec_.layer_sizes[l + 1];
    }
}

std::size_t MlpParams::bias_offset(std::size_t layer) const {
    return offsets_.at(layer) +
           static_cast<std::size_t>(spec_.layer_sizes[layer]) * spec_.layer_sizes[layer + 1];
}

Eigen::Map<RowMajorMatrix> MlpParams::weights(std::size_t layer) {
    return {values_.data() + weight_offset(layer), spec_.layer_sizes[layer + 1],
            spec_.layer_sizes[layer]};
}

Eigen::Map<const RowMajorMatrix> MlpParams::weights(std::size_t layer) const {
    return {values_.data() + weight_offset(layer), spec_.layer_sizes[layer + 1],
            spec_.layer_sizes[layer]};
}

Eigen::Map<Eigen::VectorXd> MlpParams::bias(std::size_t layer) {
    return {values_.data() + bias_offset(layer), spec_.layer_sizes[layer + 1]};
}

Eigen::Map<const Eigen::VectorXd> MlpParams::bias(std::size_t layer) const {
    return {values_.data() + bias_offset(layer), spec_.layer_sizes[layer + 1]};
}

std::size_t MlpParams::layer_of(std::size_t i) const {
    std::size_t layer = 0;
    while (layer + 1 < offsets_.size() && offsets_[layer + 1] <= i) {
        ++layer;
    }
    return layer;
}

MlpParams init_params(const MlpSpec& spec, std::uint64_t seed) {
    MlpParams params(spec);
    Rng rng(seed, 0x1417);
    for (std::size_t l = 0; l < params.layer_count(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.layer_sizes[l]));
        auto w = params.weights(l);
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) {
                w(r, c) = rng.uniform(-bound, bound);
            }
        }
    }
    return params;
}

void tanh_inplace(MatrixXd& m) {
    // on |x|, then re-signed, so the result is exactly odd
    const Eigen::ArrayXXd t = 1.0 - 2.0 / ((2.0 * m.array().abs()).exp() + 1.0);
    m = (m.array() < 0.0).select(-t, t);
}

void ForwardTrace::run(const MlpParams& params, const Points& points) {
    params_ = &params;
    forward_into(params, points, act_);
}

Eigen::VectorXd ForwardTrace::values() const { return act_.back().row(0).transpose(); }

MlpParams ForwardTrace::backward(const Eigen::VectorXd& upstream) {
    MlpParams grads(params_->spec());
    backward(upstream, grads);
    return grads;
}

void ForwardTrace::backward(const Eigen::VectorXd& upstream, MlpParams& grads) {
    const auto& act = act_;
    if (params_ == nullptr || upstream.size() != act.front().cols()) {
        throw SizeError("upstream length " + std::to_string(upstream.size()) +
                        " does not match the traced batch");
    }
    const MlpParams& params = *params_;
    if (!(grads.spec() == params.spec())) {
        grads = MlpParams(params.spec());
    }
    const std::size_t layers = params.layer_count();
    delta_.resize(layers);
    delta_[layers - 1] = upstream.transpose().array() * (1.0 - act.back().array().square());
    for (std::size_t l = layers; l-- > 0;) {
        const MatrixXd& delta = delta_[l];
        grads.weights(l).noalias() = delta * act[l].transpose();
        grads.bias(l) = delta.rowwise().sum();
        if (l > 0) {
            MatrixXd& prev = delta_[l - 1];
            prev.resize(act[l].rows(), act[l].cols());
            prev.noalias() = params.weights(l).transpose() * delta;
            prev.array() *= 1.0 - act[l].array().square();
        }
    }
}

Eigen::VectorXd forward(const MlpParams& params, const Points& points) {
    return ForwardTrace(params, points).values();
}

MlpParams backward(const MlpParams& params, const Points& points,
                   const Eigen::VectorXd& upstream) {
    if (upstream.size() != points.cols()) {
        throw SizeError("upstream length " + std::to_string(upstream.size()) +
                        " does not match batch of " + std::to_string(points.cols()));
    }
    return ForwardTrace(params, points).backward(upstream);
}

Points spatial_gradient(const MlpParams& params, const Points& points) {
    const auto act = run_forward(params, points);
    const auto n = points.cols();
    Points out(3, n);
    for (int k = 0; k < 3; ++k) {
        // Tangent of the first layer is column k of W0, broadcast over the batch.
        MatrixXd tangent = params.weights(0).col(k).replicate(1, n).cwiseProduct(tanh_slope(act[1]));
        for (std::size_t l = 1; l < params.layer_count(); ++l) {
            MatrixXd u = params.weights(l) * tangent;
            tangent = u.cwiseProduct(tanh_slope(act[l + 1]));
        }
        out.row(k) = tangent.row(0);
    }
    return out;
}

MlpParams backward_with_spatial(const MlpParams& params, const Points& points,
                                const Eigen::VectorXd& upstream_value,
                                const Points& upstream_grad) {
    const auto n = points.cols();
    if (upstream_value.size() != n || upstream_grad.cols() != n) {
        throw SizeError("upstream shapes do not match batch of " + std::to_string(n));
    }
    const auto act = run_forward(params, points);
    const std::size_t layers = params.layer_count();

    // tangents[l][k]: d act[l] / d input_k; pre[l][k] = W_l * tangents[l][k].
    std::vector<std::array<MatrixXd, 3>> tangents(layers + 1);
    std::vector<std::array<MatrixXd, 3>> pre(layers);
    for (int k = 0; k < 3; ++k) {
        tangents[0][k] = MatrixXd::Zero(3, n);
        tangents[0][k].row(k).setOnes();
    }
    for (std::size_t l = 0; l < layers; ++l) {
        const MatrixXd slope = tanh_slope(act[l + 1]);
        for (int k = 0; k < 3; ++k) {
            pre[l][k] = params.weights(l) * tangents[l][k];
            tangents[l + 1][k] = pre[l][k].cwiseProduct(slope);
        }
    }

    MlpParams grads(params.spec());
    MatrixXd act_adj = upstream_value.transpose();
    std::array<MatrixXd, 3> tan_adj;
    for (int k = 0; k < 3; ++k) {
        tan_adj[k] = upstream_grad.row(k);
    }
    for (std::size_t l = layers; l-- > 0;) {
        const MatrixXd& a = act[l + 1];
        const MatrixXd slope = tanh_slope(a);
        MatrixXd slope_adj = MatrixXd::Zero(a.rows(), n);
        std::array<MatrixXd, 3> pre_adj;
        for (int k = 0; k < 3; ++k) {
            slope_adj += tan_adj[k].cwiseProduct(pre[l][k]);
            pre_adj[k] = tan_adj[k].cwiseProduct(slope);
        }
        act_adj += (slope_adj.array() * (-2.0) * a.array()).matrix();
        const MatrixXd z_adj = act_adj.cwiseProduct(slope);

        RowMajorMatrix w_grad = z_adj * act[l].transpose();
        for (int k = 0; k < 3; ++k) {
            w_grad.noalias() += pre_adj[k] * tangents[l][k].transpose();
        }
        grads.weights(l) = w_grad;
        grads.bias(l) = z_adj.rowwise().sum();

        if (l > 0) {
            act_adj = params.weights(l).transpose() * z_adj;
            for (int k = 0; k < 3; ++k) {
                tan_adj[k] = params.weights(l).transpose() * pre_adj[k];
            }
        }
    }
    return grads;
}

MlpParams negated(const MlpParams& params) {
    MlpParams out = params;
    const std::size_t last = params.layer_count() - 1;
    out.weights(last) *= -1.0;
    out.bias(last) *= -1.0;
    return out;
}

AdamState AdamState::zeros_like(const MlpParams& params) {
    AdamState s;
    s.first_moment = Eigen::VectorXd::Zero(params.flat().size());
    s.second_moment = Eigen::VectorXd::Zero(params.flat().size());
    return s;
}

void adam_step(MlpParams& params, const MlpParams& grads, AdamState& state,
               const AdamConfig& config) {
    auto& theta = params.flat();
    const auto& g_raw = grads.flat();
    if (g_raw.size() != theta.size()) {
        throw SizeError("gradient does not match parameter shape");
    }
    if (state.first_moment.size() == 0 && state.step == 0) {
        state = AdamState::zeros_like(params);
    }
    if (state.first_moment.size() != theta.size() || state.second_moment.size() != theta.size()) {
        throw SizeError("optimizer state does not match parameter shape");
    }
    for (Eigen::Index i = 0; i < g_raw.size(); ++i) {
        if (!std::isfinite(g_raw[i])) {
            throw NumericError("non-finite gradient in layer " +
                               std::to_string(params.layer_of(static_cast<std::size_t>(i))) +
                               " (parameter " + std::to_string(i) + ")");
        }
    }
    Eigen::VectorXd g = g_raw;
    if (config.decoupled_weight_decay) {
        theta *= (1.0 - config.learning_rate * config.weight_decay);
    } else if (config.weight_decay != 0.0) {
        g += config.weight_decay * theta;
    }
    state.first_moment = config.beta1 * state.first_moment + (1.0 - config.beta1) * g;
    state.second_moment =
        config.beta2 * state.second_moment + (1.0 - config.beta2) * g.cwiseProduct(g);
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    theta.array() -= config.learning_rate * (state.first_moment.array() / c1) /
                     ((state.second_moment.array() / c2).sqrt() + config.epsilon);
}

std::string encode_params(const MlpParams& params) {
    std::string out(kMagic, sizeof(kMagic));
    const auto& sizes = params.spec().layer_sizes;
    append_u32(out, static_cast<std::uint32_t>(sizes.size()));
    for (int s : sizes) {
        append_u32(out, static_cast<std::uint32_t>(s));
    }
    append_u64(out, static_cast<std::uint64_t>(params.flat().size()));
    for (Eigen::Index i = 0; i < params.flat().size(); ++i) {
        append_u64(out, std::bit_cast<std::uint64_t>(params.flat()[i]));
    }
    return out;
}

MlpParams decode_params(std::string_view bytes) {
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("bad parameter snapshot magic");
    }
    std::size_t pos = sizeof(kMagic);
    const auto count = read_le(bytes, pos, 4);
    if (count < 2 || count > 1024) {
        throw FormatError("implausible layer count " + std::to_string(count));
    }
    MlpSpec spec;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto s = read_le(bytes, pos, 4);
        if (s == 0 || s > 1'000'000) {
            throw FormatError("implausible layer size " + std::to_string(s));
        }
        spec.layer_sizes.push_back(static_cast<int>(s));
    }
    try {
        spec.validate();
    } catch (const SizeError& e) {
        throw FormatError(std::string("snapshot layer sizes: ") + e.what());
    }
    const auto n = read_le(bytes, pos, 8);
    if (n != spec.param_count()) {
        throw FormatError("snapshot parameter count " + std::to_string(n) + " does not match " +
                          std::to_string(spec.param_count()) + " implied by layer sizes");
    }
    MlpParams params(spec);
    for (std::uint64_t i = 0; i < n; ++i) {
        const double v = std::bit_cast<double>(read_le(bytes, pos, 8));
        if (!std::isfinite(v)) {
            throw FormatError("non-finite parameter " + std::to_string(i) + " in snapshot");
        }
        params.flat()[static_cast<Eigen::Index>(i)] = v;
    }
    if (pos != bytes.size()) {
        throw FormatError("trailing bytes after parameter snapshot");
    }
    return params;
}

void save_params(const MlpParams& params, const std::filesystem::path& path) {
    write_file_atomic(path, encode_params(params));
}

MlpParams load_params(const std::filesystem::path& path) {
    try {
        return decode_params(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace pilrecon
