#include <doctest.h>

#include <cmath>
#include <cstddef>
#include <vector>

#include "metafed/errors.hpp"
#include "metafed/losses.hpp"
#include "metafed/model.hpp"
#include "metafed/rng.hpp"

using namespace metafed;

namespace {

Batch gaussian_batch(std::size_t n, std::size_t d, int classes, Rng& rng) {
    Batch batch;
    batch.inputs = Matrix(n, d);
    for (auto& v : batch.inputs.data()) v = rng.gaussian();
    batch.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) batch.labels[i] = static_cast<int>(i) % classes;
    batch.class_count = classes;
    return batch;
}

} // namespace

TEST_CASE("softmax rows are normalized and shift-invariant") {
    Matrix logits = {{1.0, 2.0, 3.0}, {1000.0, 1001.0, 999.0}};
    const Matrix p = softmax_rows(logits);
    for (std::size_t i = 0; i < 2; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(p.at(i, j) > 0.0);
            sum += p.at(i, j);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    // The absolute level (1000) must not overflow anything; the shape of row
    // 1 relative to its own max matches row 0 shifted.
    CHECK(p.at(1, 1) > p.at(1, 0));
    CHECK(p.at(1, 0) > p.at(1, 2));
}

TEST_CASE("cross entropy of uniform logits is ln K") {
    Matrix logits(3, 4, 0.7);
    const double ce = cross_entropy(logits, {0, 1, 3});
    CHECK(std::abs(ce - std::log(4.0)) < 1e-12);
}

TEST_CASE("cross entropy of a saturated correct prediction is near zero") {
    Matrix logits = {{30.0, 0.0, 0.0}};
    CHECK(cross_entropy(logits, {0}) < 1e-9);
}

TEST_CASE("cross entropy matches a longhand evaluation") {
    Matrix logits = {{1.0, 2.0}, {3.0, 0.0}};
    const double want = 0.5 * ((std::log(std::exp(1.0) + std::exp(2.0)) - 2.0) +
                               (std::log(std::exp(3.0) + std::exp(0.0)) - 3.0));
    CHECK(cross_entropy(logits, {1, 0}) == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("cross entropy rejects bad labels and empty batches") {
    Matrix logits = {{1.0, 2.0}};
    CHECK_THROWS_AS(cross_entropy(logits, {2}), input_error);
    CHECK_THROWS_AS(cross_entropy(logits, {-1}), input_error);
    CHECK_THROWS_AS(cross_entropy(Matrix(), {}), input_error);
}

TEST_CASE("distillation distance examples") {
    Matrix a = {{1.0, 2.0}};
    Matrix zero = {{0.0, 0.0}};
    CHECK(distill_distance(a, a) == 0.0);
    CHECK(distill_distance(a, zero) == 5.0);

    // Rows with squared distances 5 and 13 average to 9.
    Matrix s = {{1.0, 2.0}, {0.0, 0.0}};
    Matrix t = {{0.0, 0.0}, {2.0, 3.0}};
    CHECK(distill_distance(s, t) == 9.0);

    CHECK_THROWS_AS(distill_distance(a, Matrix(2, 2, 0.0)), shape_error);
}

TEST_CASE("distillation distance is a symmetric premetric") {
    Rng rng(44);
    for (int rep = 0; rep < 20; ++rep) {
        Matrix a(3, 4);
        Matrix b(3, 4);
        for (auto& v : a.data()) v = rng.gaussian();
        for (auto& v : b.data()) v = rng.gaussian();
        const double ab = distill_distance(a, b);
        CHECK(ab == distill_distance(b, a));
        CHECK(ab >= 0.0);
        CHECK((ab == 0.0) == (a == b));
    }
}

TEST_CASE("lambda schedule boundary values") {
    for (double lambda0 : {0.1, 1.0, 5.0, 10.0}) {
        CHECK(lambda_schedule(lambda0, 0.6, 0.6) == doctest::Approx(lambda0 / 10.0).epsilon(1e-15));
        CHECK(lambda_schedule(lambda0, 0.75, 0.5) == lambda0);
        CHECK(lambda_schedule(lambda0, 0.9, 0.2) == lambda0);
    }
    CHECK(lambda_schedule(1.0, 0.6, 0.5) ==
          doctest::Approx(std::pow(10.0, -0.5)).epsilon(1e-15));
    CHECK(lambda_schedule(1.0, 0.5, 0.6) ==
          doctest::Approx(std::pow(10.0, -1.5)).epsilon(1e-15));
    CHECK_THROWS_AS(lambda_schedule(0.0, 0.5, 0.5), config_error);
    CHECK_THROWS_AS(lambda_schedule(-1.0, 0.5, 0.5), config_error);
}

TEST_CASE("lambda schedule is monotone with range (0, lambda0]") {
    const double lambda0 = 2.0;
    double prev = 0.0;
    for (int i = 0; i <= 100; ++i) {
        const double acc_common = i / 100.0;
        const double v = lambda_schedule(lambda0, acc_common, 0.5);
        CHECK(v > 0.0);
        CHECK(v <= lambda0);
        CHECK(v >= prev);
        CHECK((v == lambda0) == (acc_common - 0.5 >= 0.2));
        prev = v;
    }
    prev = lambda0;
    for (int i = 0; i <= 100; ++i) {
        const double v = lambda_schedule(lambda0, 0.5, i / 100.0);
        CHECK(v <= prev);
        prev = v;
    }
}

TEST_CASE("proximal term examples") {
    ModelParams m;
    m.layers.push_back({Matrix{{3.0}}, {0.0}});
    m.layers.push_back({Matrix{{1.0}}, {0.0}});
    m.norm_layers.resize(2);
    m.split_index = 1;
    ModelParams ref = m;
    ref.layers[0].weights.at(0, 0) = 1.0;

    CHECK(proximal_term(m, m, 1.0) == 0.0);
    CHECK(proximal_term(m, ref, 1.0) == 2.0);
    CHECK(proximal_term(m, ref, 0.0) == 0.0);

    ModelParams other = make_mlp({2, 3, 2}, false, 1, 1);
    CHECK_THROWS_AS(proximal_term(m, other, 1.0), shape_error);
}

TEST_CASE("total loss reduces to cross entropy when no other term is active") {
    const ModelParams m = make_mlp({3, 5, 4, 2}, true, 2, 6);
    Rng rng(6);
    const Batch batch = gaussian_batch(6, 3, 2, rng);

    const LossParts parts = total_loss(m, batch, LossSpec{});
    const ForwardTrace trace = forward(m, batch, RunMode::train_frozen);
    CHECK(parts.cls == cross_entropy(trace.logits(), batch.labels));
    CHECK(parts.dist == 0.0);
    CHECK(parts.prox == 0.0);
    CHECK(parts.total == parts.cls);
}

TEST_CASE("identical student and teacher kill the distillation part") {
    const ModelParams m = make_mlp({3, 5, 4, 2}, true, 2, 8);
    Rng rng(8);
    const Batch batch = gaussian_batch(6, 3, 2, rng);

    LossSpec spec;
    spec.lambda = 10.0;
    spec.teacher_features = teacher_features(m, batch.inputs, spec.tap);
    const LossParts parts = total_loss(m, batch, spec);
    CHECK(parts.dist == 0.0);
    CHECK(parts.total == parts.cls);
}

TEST_CASE("total loss composes from separately computed parts") {
    const ModelParams student = make_mlp({3, 5, 4, 2}, true, 2, 9);
    const ModelParams teacher = make_mlp({3, 5, 4, 2}, true, 2, 90);
    Rng rng(9);
    const Batch batch = gaussian_batch(6, 3, 2, rng);

    for (Tap tap : {Tap::penultimate, Tap::last_hidden_block, Tap::combined}) {
        LossSpec spec;
        spec.lambda = 1.0;
        spec.tap = tap;
        spec.teacher_features = teacher_features(teacher, batch.inputs, tap);
        const LossParts parts = total_loss(student, batch, spec);

        const ForwardTrace trace = forward(student, batch, RunMode::train_frozen);
        const std::vector<std::size_t> taps = tap_boundaries(student, tap);
        double dist = 0.0;
        for (std::size_t i = 0; i < taps.size(); ++i) {
            dist += distill_distance(trace.boundary(taps[i]), spec.teacher_features[i]);
        }
        const double cls = cross_entropy(trace.logits(), batch.labels);
        CHECK(parts.dist == dist);
        CHECK(std::abs(parts.total - (cls + spec.lambda * dist)) < 1e-12);
    }
}

TEST_CASE("loss parts stay additive and linear in lambda") {
    const ModelParams student = make_mlp({3, 5, 4, 2}, true, 2, 14);
    const ModelParams teacher = make_mlp({3, 5, 4, 2}, true, 2, 15);
    const ModelParams anchor = make_mlp({3, 5, 4, 2}, true, 2, 16);
    Rng rng(14);
    const Batch batch = gaussian_batch(5, 3, 2, rng);

    LossSpec spec;
    spec.lambda = 1.0;
    spec.proximal_mu = 0.3;
    spec.reference = &anchor;
    spec.teacher_features = teacher_features(teacher, batch.inputs, spec.tap);
    const LossParts at_one = total_loss(student, batch, spec);
    CHECK(at_one.total == at_one.cls + 1.0 * at_one.dist + at_one.prox);

    spec.lambda = 0.5;
    const LossParts at_half = total_loss(student, batch, spec);
    CHECK(at_half.dist == at_one.dist);
    CHECK(at_half.total == at_half.cls + 0.5 * at_half.dist + at_half.prox);
    // Halving lambda halves the weighted contribution exactly: scaling by a
    // power of two only shifts the exponent.
    CHECK(2.0 * (0.5 * at_half.dist) == 1.0 * at_one.dist);
}

TEST_CASE("total loss rejects train mode and a missing teacher") {
    const ModelParams m = make_mlp({3, 5, 2}, true, 1, 2);
    Rng rng(2);
    const Batch batch = gaussian_batch(4, 3, 2, rng);

    CHECK_THROWS_AS(total_loss(m, batch, LossSpec{}, RunMode::train), config_error);

    LossSpec spec;
    spec.lambda = 1.0;
    CHECK_THROWS_AS(total_loss(m, batch, spec), config_error);
}

TEST_CASE("tap names round-trip and reject unknown strings") {
    for (Tap tap : {Tap::penultimate, Tap::last_hidden_block, Tap::combined}) {
        CHECK(tap_from_name(tap_name(tap)) == tap);
    }
    CHECK_THROWS_AS(tap_from_name("softmax"), config_error);
}

TEST_CASE("accuracy counts argmax hits with low-index tie break") {
    ModelParams m;
    m.layers.push_back({Matrix{{1.0, 0.0}, {0.0, 1.0}}, {0.0, 0.0}});
    m.layers.push_back({Matrix{{1.0, 0.0}, {0.0, 1.0}}, {0.0, 0.0}});
    m.norm_layers.resize(2);
    m.split_index = 1;

    Batch batch;
    batch.inputs = Matrix{{2.0, 1.0}, {1.0, 2.0}, {1.0, 1.0}};
    batch.labels = {0, 1, 0};
    batch.class_count = 2;
    // Rows: clear class 0, clear class 1, tie resolved to class 0.
    CHECK(accuracy(m, batch) == 1.0);

    batch.labels = {1, 0, 1};
    CHECK(accuracy(m, batch) == 0.0);
}
