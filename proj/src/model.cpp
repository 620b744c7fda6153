#include "metafed/model.hpp"

#include <algorithm>
#include <cmath>

#include "metafed/errors.hpp"
#include "metafed/losses.hpp"
#include "metafed/rng.hpp"

namespace metafed {

namespace {

void check_batch(const ModelParams& model, const Batch& batch) {
    if (batch.inputs.rows() != batch.labels.size()) {
        throw shape_error("batch input row count does not equal label count");
    }
    if (batch.inputs.cols() != model.in_dim()) {
        throw shape_error("batch input width does not equal first-layer in-dim");
    }
}

// Normalizes z column-wise. Train modes use batch statistics; eval uses the
// stored running statistics. Returns the statistics actually used so backward
// can replay them.
void apply_norm(const Matrix& z, const NormLayer& norm, RunMode mode, Matrix& xhat, Matrix& y,
                std::vector<double>& mean_used, std::vector<double>& inv_std_used,
                NormLayer* stats_sink) {
    const std::size_t n = z.rows(), c = z.cols();
    mean_used.assign(c, 0.0);
    std::vector<double> var(c, 0.0);

    if (mode == RunMode::eval) {
        mean_used = norm.running_mean;
        var = norm.running_var;
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            auto r = z.row(i);
            for (std::size_t j = 0; j < c; ++j) mean_used[j] += r[j];
        }
        for (std::size_t j = 0; j < c; ++j) mean_used[j] /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            auto r = z.row(i);
            for (std::size_t j = 0; j < c; ++j) {
                const double d = r[j] - mean_used[j];
                var[j] += d * d;
            }
        }
        for (std::size_t j = 0; j < c; ++j) var[j] /= static_cast<double>(n);

        if (stats_sink != nullptr) {
            for (std::size_t j = 0; j < c; ++j) {
                stats_sink->running_mean[j] =
                    kNormMomentum * stats_sink->running_mean[j] + (1.0 - kNormMomentum) * mean_used[j];
                stats_sink->running_var[j] =
                    kNormMomentum * stats_sink->running_var[j] + (1.0 - kNormMomentum) * var[j];
            }
        }
    }

    inv_std_used.assign(c, 0.0);
    for (std::size_t j = 0; j < c; ++j) {
        inv_std_used[j] = 1.0 / std::sqrt(var[j] + kNormEpsilon);
    }

    xhat = Matrix(n, c);
    y = Matrix(n, c);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            const double xh = (z.at(i, j) - mean_used[j]) * inv_std_used[j];
            xhat.at(i, j) = xh;
            y.at(i, j) = norm.scale[j] * xh + norm.shift[j];
        }
    }
}

ForwardTrace forward_impl(const ModelParams& model, const Matrix& inputs, RunMode mode,
                          ModelParams* stats_sink) {
    if (inputs.cols() != model.in_dim()) {
        throw shape_error("input width does not equal first-layer in-dim");
    }
    ForwardTrace trace;
    trace.input = inputs;
    trace.mode = mode;
    trace.layers.resize(model.layer_count());

    const Matrix* x = &trace.input;
    const std::size_t last = model.layer_count() - 1;
    for (std::size_t k = 0; k <= last; ++k) {
        auto& cache = trace.layers[k];
        const auto& layer = model.layers[k];

        cache.pre_norm = matmul(*x, layer.weights);
        add_row_vector(cache.pre_norm, layer.bias);

        if (model.norm_layers[k].has_value()) {
            NormLayer* sink =
                stats_sink != nullptr ? &stats_sink->norm_layers[k].value() : nullptr;
            apply_norm(cache.pre_norm, *model.norm_layers[k], mode, cache.normalized,
                       cache.pre_act, cache.batch_mean, cache.inv_std, sink);
        } else {
            cache.pre_act = cache.pre_norm;
        }

        if (k < last) {
            cache.post_act = cache.pre_act;
            for (double& v : cache.post_act.data()) v = v > 0.0 ? v : 0.0;
        } else {
            cache.post_act = cache.pre_act;
        }
        if (!cache.post_act.all_finite()) {
            throw numeric_error("non-finite activation at layer " + std::to_string(k));
        }
        x = &cache.post_act;
    }
    return trace;
}

} // namespace

std::size_t ModelParams::param_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers) n += layer.weights.size() + layer.bias.size();
    for (const auto& norm : norm_layers) {
        if (norm.has_value()) n += norm->scale.size() + norm->shift.size();
    }
    return n;
}

bool ModelParams::same_architecture(const ModelParams& other) const {
    if (layers.size() != other.layers.size() || split_index != other.split_index) return false;
    for (std::size_t k = 0; k < layers.size(); ++k) {
        if (layers[k].weights.rows() != other.layers[k].weights.rows() ||
            layers[k].weights.cols() != other.layers[k].weights.cols()) {
            return false;
        }
        if (norm_layers[k].has_value() != other.norm_layers[k].has_value()) return false;
    }
    return true;
}

void ModelParams::validate() const {
    if (layers.empty()) throw config_error("model has no layers");
    if (norm_layers.size() != layers.size()) {
        throw shape_error("norm_layers not aligned with layers");
    }
    if (split_index == 0 || split_index >= layers.size()) {
        throw config_error("split_index must leave both extractor and head non-empty");
    }
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const auto& layer = layers[k];
        if (layer.bias.size() != layer.weights.cols()) {
            throw shape_error("bias length does not match layer out-dim");
        }
        if (k + 1 < layers.size() &&
            layer.weights.cols() != layers[k + 1].weights.rows()) {
            throw shape_error("adjacent layer dimensions do not compose");
        }
        if (norm_layers[k].has_value()) {
            const auto& norm = *norm_layers[k];
            const std::size_t c = layer.weights.cols();
            if (norm.running_mean.size() != c || norm.running_var.size() != c ||
                norm.scale.size() != c || norm.shift.size() != c) {
                throw shape_error("norm layer width does not match layer out-dim");
            }
            for (double v : norm.running_var) {
                if (!(v > 0.0)) throw numeric_error("running variance must be strictly positive");
            }
        }
    }
}

ForwardTrace forward(ModelParams& model, const Matrix& inputs, RunMode mode) {
    return forward_impl(model, inputs, mode, mode == RunMode::train ? &model : nullptr);
}

ForwardTrace forward(const ModelParams& model, const Matrix& inputs, RunMode mode) {
    if (mode == RunMode::train) {
        throw config_error("train mode needs a mutable model for running statistics");
    }
    return forward_impl(model, inputs, mode, nullptr);
}

ForwardTrace forward(ModelParams& model, const Batch& batch, RunMode mode) {
    check_batch(model, batch);
    return forward(model, batch.inputs, mode);
}

ForwardTrace forward(const ModelParams& model, const Batch& batch, RunMode mode) {
    check_batch(model, batch);
    return forward(model, batch.inputs, mode);
}

std::vector<std::size_t> tap_boundaries(const ModelParams& model, Tap tap) {
    const std::size_t layer_count = model.layer_count();
    if (layer_count < 2) throw config_error("tap needs at least one hidden boundary");
    const std::size_t penultimate = layer_count - 2;
    switch (tap) {
        case Tap::penultimate:
            return {penultimate};
        case Tap::last_hidden_block:
            return {layer_count >= 3 ? layer_count - 3 : penultimate};
        case Tap::combined:
            if (layer_count < 3) {
                throw config_error("combined tap needs at least two hidden boundaries");
            }
            return {layer_count - 3, penultimate};
    }
    throw config_error("unknown tap");
}

Gradients backward(const ModelParams& model, const ForwardTrace& trace, const Batch& batch,
                   const LossSpec& spec) {
    check_batch(model, batch);
    if (trace.layers.size() != model.layer_count()) {
        throw shape_error("trace does not match model depth");
    }
    if (spec.distill_active() && spec.teacher_features.empty()) {
        throw config_error("distillation term active but no teacher features given");
    }
    if (spec.proximal_active() && spec.reference == nullptr) {
        throw config_error("proximal term active but no reference model given");
    }

    const std::size_t n = batch.inputs.rows();
    const std::size_t last = model.layer_count() - 1;
    const double inv_n = 1.0 / static_cast<double>(n);

    Gradients grads;
    grads.layers.resize(model.layer_count());
    grads.norm_layers.resize(model.layer_count());

    // Seed at the logits: mean cross-entropy gives (softmax - onehot) / n.
    Matrix d_out = softmax_rows(trace.logits());
    for (std::size_t i = 0; i < n; ++i) {
        const int label = batch.labels[i];
        if (label < 0 || static_cast<std::size_t>(label) >= d_out.cols()) {
            throw input_error("label out of range");
        }
        d_out.at(i, static_cast<std::size_t>(label)) -= 1.0;
    }
    for (double& v : d_out.data()) v *= inv_n;

    // Distillation pulls on the tapped boundaries: d/d(stu) of the mean
    // squared distance is 2/n * (stu - tea), weighted by lambda.
    std::vector<Matrix> dist_pull(model.layer_count());
    if (spec.distill_active()) {
        const auto taps = tap_boundaries(model, spec.tap);
        if (spec.teacher_features.size() != taps.size()) {
            throw config_error("teacher feature count does not match tap boundaries");
        }
        for (std::size_t t = 0; t < taps.size(); ++t) {
            const Matrix& stu = trace.boundary(taps[t]);
            const Matrix& tea = spec.teacher_features[t];
            if (!stu.same_shape(tea)) throw shape_error("teacher feature shape mismatch");
            Matrix pull(stu.rows(), stu.cols());
            for (std::size_t i = 0; i < pull.size(); ++i) {
                pull.data()[i] = spec.lambda * 2.0 * inv_n * (stu.data()[i] - tea.data()[i]);
            }
            dist_pull[taps[t]] = std::move(pull);
        }
    }

    for (std::size_t k = last + 1; k-- > 0;) {
        const auto& cache = trace.layers[k];
        const auto& layer = model.layers[k];

        if (dist_pull[k].size() > 0) {
            for (std::size_t i = 0; i < d_out.size(); ++i) {
                d_out.data()[i] += dist_pull[k].data()[i];
            }
        }

        // ReLU on hidden layers only.
        Matrix d_pre_act = std::move(d_out);
        if (k < last) {
            for (std::size_t i = 0; i < d_pre_act.size(); ++i) {
                if (cache.pre_act.data()[i] <= 0.0) d_pre_act.data()[i] = 0.0;
            }
        }

        Matrix d_pre_norm;
        if (model.norm_layers[k].has_value()) {
            const auto& norm = *model.norm_layers[k];
            const std::size_t c = cache.pre_norm.cols();
            NormGrad ng{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
            d_pre_norm = Matrix(n, c);

            for (std::size_t j = 0; j < c; ++j) {
                double dscale = 0.0, dshift = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    dscale += d_pre_act.at(i, j) * cache.normalized.at(i, j);
                    dshift += d_pre_act.at(i, j);
                }
                ng.scale[j] = dscale;
                ng.shift[j] = dshift;

                const double istd = cache.inv_std[j];
                if (trace.mode == RunMode::eval) {
                    // Stored statistics are constants.
                    for (std::size_t i = 0; i < n; ++i) {
                        d_pre_norm.at(i, j) = d_pre_act.at(i, j) * norm.scale[j] * istd;
                    }
                } else {
                    // Batch statistics depend on the pre-norm values, so the
                    // mean and variance paths both contribute.
                    double sum_dxhat = 0.0, sum_dxhat_xc = 0.0, sum_xc = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        const double dxhat = d_pre_act.at(i, j) * norm.scale[j];
                        const double xc = cache.pre_norm.at(i, j) - cache.batch_mean[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xc += dxhat * xc;
                        sum_xc += xc;
                    }
                    const double dvar = sum_dxhat_xc * (-0.5) * istd * istd * istd;
                    const double dmean =
                        -istd * sum_dxhat + dvar * (-2.0 * inv_n) * sum_xc;
                    for (std::size_t i = 0; i < n; ++i) {
                        const double dxhat = d_pre_act.at(i, j) * norm.scale[j];
                        const double xc = cache.pre_norm.at(i, j) - cache.batch_mean[j];
                        d_pre_norm.at(i, j) =
                            dxhat * istd + dvar * 2.0 * xc * inv_n + dmean * inv_n;
                    }
                }
            }
            grads.norm_layers[k] = std::move(ng);
        } else {
            d_pre_norm = std::move(d_pre_act);
        }

        const Matrix& layer_input = k == 0 ? trace.input : trace.boundary(k - 1);
        grads.layers[k].weights = matmul_at_b(layer_input, d_pre_norm);
        grads.layers[k].bias = col_sum(d_pre_norm);

        if (spec.proximal_active()) {
            const auto& ref = spec.reference->layers[k];
            if (!ref.weights.same_shape(layer.weights)) {
                throw shape_error("proximal reference architecture mismatch");
            }
            for (std::size_t i = 0; i < layer.weights.size(); ++i) {
                grads.layers[k].weights.data()[i] +=
                    spec.proximal_mu * (layer.weights.data()[i] - ref.weights.data()[i]);
            }
            for (std::size_t i = 0; i < layer.bias.size(); ++i) {
                grads.layers[k].bias[i] += spec.proximal_mu * (layer.bias[i] - ref.bias[i]);
            }
        }

        if (k > 0) d_out = matmul_a_bt(d_pre_norm, layer.weights);
    }

    return grads;
}

Gradients backward(const ModelParams& model, const Batch& batch, const LossSpec& spec) {
    const ForwardTrace trace = forward(model, batch, RunMode::train_frozen);
    return backward(model, trace, batch, spec);
}

void sgd_step(ModelParams& model, const Gradients& grads, double lr) {
    if (!(lr > 0.0)) throw config_error("learning rate must be positive");
    if (grads.layers.size() != model.layers.size()) {
        throw shape_error("gradient depth does not match model");
    }
    for (std::size_t k = 0; k < model.layers.size(); ++k) {
        auto& layer = model.layers[k];
        const auto& g = grads.layers[k];
        if (!g.weights.same_shape(layer.weights) || g.bias.size() != layer.bias.size()) {
            throw shape_error("gradient shape does not match layer " + std::to_string(k));
        }
        for (std::size_t i = 0; i < layer.weights.size(); ++i) {
            layer.weights.data()[i] -= lr * g.weights.data()[i];
        }
        for (std::size_t i = 0; i < layer.bias.size(); ++i) {
            layer.bias[i] -= lr * g.bias[i];
        }
        if (model.norm_layers[k].has_value() && grads.norm_layers[k].has_value()) {
            auto& norm = *model.norm_layers[k];
            const auto& ng = *grads.norm_layers[k];
            for (std::size_t i = 0; i < norm.scale.size(); ++i) {
                norm.scale[i] -= lr * ng.scale[i];
                norm.shift[i] -= lr * ng.shift[i];
            }
        }
    }
}

void copy_model(const ModelParams& src, ModelParams& dst, bool preserve_local_norm) {
    if (!src.same_architecture(dst)) {
        throw shape_error("copy_model needs identical architectures");
    }
    dst.layers = src.layers;
    if (!preserve_local_norm) {
        dst.norm_layers = src.norm_layers;
    }
}

LossParts train_step(ModelParams& model, const Batch& batch, const LossSpec& spec, double lr) {
    const ForwardTrace trace = forward(model, batch, RunMode::train);
    const LossParts parts = loss_parts_from_trace(model, trace, batch, spec);
    const Gradients grads = backward(model, trace, batch, spec);
    sgd_step(model, grads, lr);
    return parts;
}

ModelParams make_mlp(const std::vector<std::size_t>& dims, bool with_norm,
                     std::size_t split_index, std::uint64_t seed) {
    if (dims.size() < 3) throw config_error("mlp needs at least two layers");
    Rng rng(mix_seed(seed, 0x6d6c70 /* "mlp" */));
    ModelParams model;
    model.split_index = split_index;
    const std::size_t layer_count = dims.size() - 1;
    for (std::size_t k = 0; k < layer_count; ++k) {
        const std::size_t fan_in = dims[k], fan_out = dims[k + 1];
        LinearLayer layer;
        layer.weights = Matrix(fan_in, fan_out);
        const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& w : layer.weights.data()) w = rng.uniform(-a, a);
        layer.bias.assign(fan_out, 0.0);
        model.layers.push_back(std::move(layer));

        if (with_norm && k + 1 < layer_count) {
            model.norm_layers.push_back(NormLayer{
                std::vector<double>(fan_out, 0.0), std::vector<double>(fan_out, 1.0),
                std::vector<double>(fan_out, 1.0), std::vector<double>(fan_out, 0.0)});
        } else {
            model.norm_layers.push_back(std::nullopt);
        }
    }
    model.validate();
    return model;
}

ModelParams make_backbone(std::size_t in_dim, std::size_t hidden, std::size_t classes,
                          std::uint64_t seed) {
    return make_mlp({in_dim, hidden, hidden, classes}, true, 2, seed);
}

} // namespace metafed
