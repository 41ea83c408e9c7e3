#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "pilrecon/geometry.hpp"

namespace pilrecon {

/// Layer widths of a fully connected net, input first. Input must be 3 and output 1.
struct MlpSpec {
    std::vector<int> layer_sizes;

    /// (3, 6, 12, 24, 12, 6, 3, 1): 823 parameters.
    static MlpSpec standard();

    std::size_t param_count() const;
    std::size_t layer_count() const { return layer_sizes.empty() ? 0 : layer_sizes.size() - 1; }
    void validate() const;

    friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

std::size_t param_count(const std::vector<int>& layer_sizes);

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Weights and biases stored contiguously: for each layer the weight matrix
/// (out x in, row-major) followed by its bias vector. Gradients use the same type.
class MlpParams {
public:
    MlpParams() = default;
    explicit MlpParams(MlpSpec spec);

    const MlpSpec& spec() const { return spec_; }
    std::size_t layer_count() const { return spec_.layer_count(); }

    Eigen::Map<RowMajorMatrix> weights(std::size_t layer);
    Eigen::Map<const RowMajorMatrix> weights(std::size_t layer) const;
    Eigen::Map<Eigen::VectorXd> bias(std::size_t layer);
    Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;

    Eigen::VectorXd& flat() { return values_; }
    const Eigen::VectorXd& flat() const { return values_; }

    /// Layer owning flat index `i`.
    std::size_t layer_of(std::size_t i) const;

    friend bool operator==(const MlpParams& a, const MlpParams& b) {
        return a.spec_ == b.spec_ && a.values_.size() == b.values_.size() &&
               (a.values_.array() == b.values_.array()).all();
    }

private:
    std::size_t weight_offset(std::size_t layer) const { return offsets_.at(layer); }
    std::size_t bias_offset(std::size_t layer) const;

    MlpSpec spec_;
    Eigen::VectorXd values_;
    std::vector<std::size_t> offsets_;
};

/// Weights uniform in +-1/sqrt(fan_in), zero biases.
MlpParams init_params(const MlpSpec& spec, std::uint64_t seed);

/// Activations of one batch, kept for a following reverse pass.
/// Buffers are reused across calls to run(), so one trace per training loop avoids
/// reallocating the batch-sized activations every step.
class ForwardTrace {
public:
    ForwardTrace() = default;
    ForwardTrace(const MlpParams& params, const Points& points) { run(params, points); }

    void run(const MlpParams& params, const Points& points);

    Eigen::VectorXd values() const;
    /// Gradient of sum_i upstream[i] * f(points_i) with respect to every parameter.
    MlpParams backward(const Eigen::VectorXd& upstream);
    void backward(const Eigen::VectorXd& upstream, MlpParams& grads);

private:
    const MlpParams* params_ = nullptr;
    std::vector<Eigen::MatrixXd> act_;
    std::vector<Eigen::MatrixXd> delta_;  ///< per-layer adjoints of the pre-activations
};

/// Elementwise tanh via 1 - 2 / (exp(2|x|) + 1), which vectorizes; exactly odd.
void tanh_inplace(Eigen::MatrixXd& m);

/// f at each point (column). tanh follows every layer, including the last.
Eigen::VectorXd forward(const MlpParams& params, const Points& points);

/// Gradient of sum_i upstream[i] * f(points_i) with respect to every parameter.
MlpParams backward(const MlpParams& params, const Points& points,
                   const Eigen::VectorXd& upstream);

/// d f / d(x, y, z) at each point (column).
Points spatial_gradient(const MlpParams& params, const Points& points);

/// Gradient of sum_i upstream_value[i] * f(p_i) + <upstream_grad.col(i), grad f(p_i)>
/// with respect to every parameter. Used when the loss depends on the spatial gradient.
MlpParams backward_with_spatial(const MlpParams& params, const Points& points,
                                const Eigen::VectorXd& upstream_value,
                                const Points& upstream_grad);

/// Negates the output layer; since tanh is odd the field becomes -f.
MlpParams negated(const MlpParams& params);

struct AdamConfig {
    double learning_rate = 5e-3;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// false: decay added to the gradient before the moments; true: applied directly to weights.
    bool decoupled_weight_decay = false;
};

struct AdamState {
    Eigen::VectorXd first_moment;
    Eigen::VectorXd second_moment;
    std::uint64_t step = 0;

    static AdamState zeros_like(const MlpParams& params);
};

void adam_step(MlpParams& params, const MlpParams& grads, AdamState& state,
               const AdamConfig& config);

// Snapshot layout (all little-endian):
//   8 bytes  magic "PILRMLP1"
//   u32      number of layer sizes L
//   L x u32  layer sizes
//   u64      parameter count P
//   P x f64  flat parameters in layer order, weights row-major then biases
std::string encode_params(const MlpParams& params);
MlpParams decode_params(std::string_view bytes);
void save_params(const MlpParams& params, const std::filesystem::path& path);
MlpParams load_params(const std::filesystem::path& path);

}  // namespace pilrecon
