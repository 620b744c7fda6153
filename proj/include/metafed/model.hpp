#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "metafed/loss_spec.hpp"
#include "metafed/matrix.hpp"

namespace metafed {

// Normalization constants. The running statistics use exponential averaging
// with this momentum; epsilon guards the variance denominator.
inline constexpr double kNormMomentum = 0.9;
inline constexpr double kNormEpsilon = 1e-5;

// A labeled minibatch: inputs is n x d, labels hold class indices in [0, K).
struct Batch {
    Matrix inputs;
    std::vector<int> labels;
    int class_count = 0;
};

struct LinearLayer {
    Matrix weights; // in_dim x out_dim
    std::vector<double> bias;

    bool operator==(const LinearLayer& other) const = default;
};

// Per-feature batch normalization state. scale/shift are trained parameters;
// running_mean/running_var are statistics and never receive gradients.
struct NormLayer {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    std::vector<double> scale;
    std::vector<double> shift;

    bool operator==(const NormLayer& other) const = default;
};

// Layered parameters of f = c(g(x)): layers [0, split_index) form the
// feature extractor g, layers [split_index, L) the classifier head c.
// norm_layers[k], when present, normalizes layer k's pre-activation.
struct ModelParams {
    std::vector<LinearLayer> layers;
    std::vector<std::optional<NormLayer>> norm_layers;
    std::size_t split_index = 0;

    std::size_t layer_count() const { return layers.size(); }
    std::size_t in_dim() const { return layers.front().weights.rows(); }
    std::size_t out_dim() const { return layers.back().weights.cols(); }
    std::size_t param_count() const;

    bool same_architecture(const ModelParams& other) const;
    bool operator==(const ModelParams& other) const = default;
    // Throws shape_error / config_error when an invariant is broken.
    void validate() const;
};

struct LayerGrad {
    Matrix weights;
    std::vector<double> bias;
};

struct NormGrad {
    std::vector<double> scale;
    std::vector<double> shift;
};

// One gradient per trained parameter, shaped exactly like ModelParams.
struct Gradients {
    std::vector<LayerGrad> layers;
    std::vector<std::optional<NormGrad>> norm_layers;
};

enum class RunMode {
    train,        // batch statistics, running statistics updated
    train_frozen, // batch statistics, running statistics untouched
    eval,         // stored running statistics, pure function
};

// Everything forward computes, kept so backward can reuse it. boundary(k) is
// the activation leaving block k; the last boundary holds the logits.
struct ForwardTrace {
    struct LayerCache {
        Matrix pre_norm;                 // x W + b
        Matrix normalized;               // x-hat, only when the layer has norm
        std::vector<double> batch_mean;  // statistics used for normalization
        std::vector<double> inv_std;
        Matrix pre_act;                  // input to the nonlinearity
        Matrix post_act;                 // block output (= logits for the last layer)
    };

    Matrix input;
    std::vector<LayerCache> layers;
    RunMode mode = RunMode::eval;

    const Matrix& logits() const { return layers.back().post_act; }
    const Matrix& boundary(std::size_t k) const { return layers[k].post_act; }
    std::size_t boundary_count() const { return layers.size(); }
};

// Runs the network. Train mode updates the model's running statistics in
// place; the other modes leave the model untouched.
ForwardTrace forward(ModelParams& model, const Matrix& inputs, RunMode mode);
ForwardTrace forward(const ModelParams& model, const Matrix& inputs, RunMode mode);
ForwardTrace forward(ModelParams& model, const Batch& batch, RunMode mode);
ForwardTrace forward(const ModelParams& model, const Batch& batch, RunMode mode);

// Activation boundaries used for distillation under the given tap, in the
// order teacher_features must follow.
std::vector<std::size_t> tap_boundaries(const ModelParams& model, Tap tap);

// Gradient of cls + lambda*dist + prox with respect to every trained
// parameter, reusing a trace produced with batch statistics (train or
// train_frozen mode).
Gradients backward(const ModelParams& model, const ForwardTrace& trace, const Batch& batch,
                   const LossSpec& spec);
// Convenience path that runs its own train_frozen forward.
Gradients backward(const ModelParams& model, const Batch& batch, const LossSpec& spec);

// In-place SGD: param -= lr * grad. Running statistics are untouched.
void sgd_step(ModelParams& model, const Gradients& grads, double lr);

// Overwrites dst's layers with src's. With preserve_local_norm, dst keeps its
// own normalization layers (statistics and affine parameters) untouched.
void copy_model(const ModelParams& src, ModelParams& dst, bool preserve_local_norm);

// One training step: forward in train mode, backward, SGD update. Returns the
// loss decomposition at the pre-update parameters.
LossParts train_step(ModelParams& model, const Batch& batch, const LossSpec& spec, double lr);

// Builds an MLP with the given layer widths (dims.size() >= 3, so at least
// two layers). Hidden layers get ReLU and, when with_norm, batch norm.
// Weights are Glorot-uniform from the seed, biases zero.
ModelParams make_mlp(const std::vector<std::size_t>& dims, bool with_norm, std::size_t split_index,
                     std::uint64_t seed);

// The default backbone: in -> hidden -> hidden -> classes, norm on both
// hidden layers, feature extractor = first two layers.
ModelParams make_backbone(std::size_t in_dim, std::size_t hidden, std::size_t classes,
                          std::uint64_t seed);

} // namespace metafed
