#include "metafed/losses.hpp"

#include <algorithm>
#include <cmath>

#include "metafed/errors.hpp"

namespace metafed {

const char* tap_name(Tap tap) {
    switch (tap) {
        case Tap::penultimate: return "penultimate";
        case Tap::last_hidden_block: return "last_hidden_block";
        case Tap::combined: return "combined";
    }
    throw config_error("unknown tap");
}

Tap tap_from_name(const std::string& name) {
    if (name == "penultimate") return Tap::penultimate;
    if (name == "last_hidden_block") return Tap::last_hidden_block;
    if (name == "combined") return Tap::combined;
    throw config_error("unknown tap '" + name + "'");
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const auto in = logits.row(i);
        auto dst = out.row(i);
        const double mx = *std::max_element(in.begin(), in.end());
        double denom = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            dst[j] = std::exp(in[j] - mx);
            denom += dst[j];
        }
        for (std::size_t j = 0; j < in.size(); ++j) dst[j] /= denom;
    }
    return out;
}

double cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
    if (logits.rows() != labels.size()) {
        throw shape_error("logit row count does not equal label count");
    }
    if (logits.rows() == 0) throw input_error("cross entropy over an empty batch");
    double total = 0.0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const int label = labels[i];
        if (label < 0 || static_cast<std::size_t>(label) >= logits.cols()) {
            throw input_error("label out of range");
        }
        const auto r = logits.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double sum_exp = 0.0;
        for (double v : r) sum_exp += std::exp(v - mx);
        total += mx + std::log(sum_exp) - r[static_cast<std::size_t>(label)];
    }
    const double value = total / static_cast<double>(logits.rows());
    if (!std::isfinite(value)) throw numeric_error("non-finite cross entropy");
    return value;
}

double distill_distance(const Matrix& student, const Matrix& teacher) {
    if (!student.same_shape(teacher)) {
        throw shape_error("student and teacher feature shapes differ");
    }
    if (student.rows() == 0) throw input_error("distillation over an empty batch");
    double total = 0.0;
    for (std::size_t i = 0; i < student.size(); ++i) {
        const double d = student.data()[i] - teacher.data()[i];
        total += d * d;
    }
    return total / static_cast<double>(student.rows());
}

double lambda_schedule(double lambda0, double acc_common, double acc_local) {
    if (!(lambda0 > 0.0)) throw config_error("lambda0 must be positive");
    const double gap = (acc_common - acc_local) * 5.0;
    return lambda0 * std::pow(10.0, std::min(1.0, gap) - 1.0);
}

double proximal_term(const ModelParams& model, const ModelParams& reference, double mu) {
    if (!model.same_architecture(reference)) {
        throw shape_error("proximal reference architecture mismatch");
    }
    double sq = 0.0;
    for (std::size_t k = 0; k < model.layers.size(); ++k) {
        const auto& a = model.layers[k];
        const auto& b = reference.layers[k];
        for (std::size_t i = 0; i < a.weights.size(); ++i) {
            const double d = a.weights.data()[i] - b.weights.data()[i];
            sq += d * d;
        }
        for (std::size_t i = 0; i < a.bias.size(); ++i) {
            const double d = a.bias[i] - b.bias[i];
            sq += d * d;
        }
    }
    return 0.5 * mu * sq;
}

std::vector<Matrix> teacher_features(const ModelParams& teacher, const Matrix& inputs, Tap tap) {
    const ForwardTrace trace = forward(teacher, inputs, RunMode::train_frozen);
    std::vector<Matrix> features;
    for (const std::size_t b : tap_boundaries(teacher, tap)) {
        features.push_back(trace.boundary(b));
    }
    return features;
}

LossParts loss_parts_from_trace(const ModelParams& model, const ForwardTrace& trace,
                                const Batch& batch, const LossSpec& spec) {
    LossParts parts;
    parts.cls = cross_entropy(trace.logits(), batch.labels);
    if (spec.distill_active()) {
        const auto taps = tap_boundaries(model, spec.tap);
        if (spec.teacher_features.size() != taps.size()) {
            throw config_error("teacher feature count does not match tap boundaries");
        }
        for (std::size_t t = 0; t < taps.size(); ++t) {
            parts.dist += distill_distance(trace.boundary(taps[t]), spec.teacher_features[t]);
        }
    }
    if (spec.proximal_active()) {
        if (spec.reference == nullptr) {
            throw config_error("proximal term active but no reference model given");
        }
        parts.prox = proximal_term(model, *spec.reference, spec.proximal_mu);
    }
    parts.total = parts.cls + spec.lambda * parts.dist + parts.prox;
    if (!std::isfinite(parts.total)) throw numeric_error("non-finite loss");
    return parts;
}

LossParts total_loss(const ModelParams& model, const Batch& batch, const LossSpec& spec,
                     RunMode mode) {
    if (mode == RunMode::train) {
        throw config_error("total_loss is a pure evaluation; use train_frozen or eval");
    }
    const ForwardTrace trace = forward(model, batch, mode);
    return loss_parts_from_trace(model, trace, batch, spec);
}

double accuracy(const ModelParams& model, const Batch& batch) {
    if (batch.labels.empty()) throw input_error("accuracy over an empty batch");
    const ForwardTrace trace = forward(model, batch, RunMode::eval);
    const Matrix& logits = trace.logits();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const auto r = logits.row(i);
        const std::size_t arg =
            static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
        if (arg == static_cast<std::size_t>(batch.labels[i])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

} // namespace metafed
