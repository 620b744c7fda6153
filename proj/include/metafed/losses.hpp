#pragma once

#include <vector>

#include "metafed/loss_spec.hpp"
#include "metafed/matrix.hpp"
#include "metafed/model.hpp"

namespace metafed {

// Row-wise stable softmax.
Matrix softmax_rows(const Matrix& logits);

// Mean negative log-likelihood of the true labels under row-wise softmax,
// computed through log-sum-exp so large logits stay finite.
double cross_entropy(const Matrix& logits, const std::vector<int>& labels);

// Mean over rows of the squared L2 distance between student and teacher
// feature rows. Returned raw, without the lambda weight.
double distill_distance(const Matrix& student, const Matrix& teacher);

// Distillation weight from the accuracy gap between the incoming common
// model and the local personalized model:
//   lambda = lambda0 * 10^(min(1, (acc_common - acc_local) * 5) - 1)
// Monotone in the gap, capped at lambda0 once the gap reaches 0.2.
double lambda_schedule(double lambda0, double acc_common, double acc_local);

// (mu/2) * squared L2 distance between the weight/bias parameters of the
// model and a reference. Normalization layers are left out.
double proximal_term(const ModelParams& model, const ModelParams& reference, double mu);

// Teacher-side feature maps at the tapped boundaries, evaluated with batch
// statistics so a student with identical parameters reproduces them exactly.
std::vector<Matrix> teacher_features(const ModelParams& teacher, const Matrix& inputs, Tap tap);

// Loss parts for a forward trace that already exists. The distillation part
// sums the per-boundary mean distances when the tap selects more than one.
LossParts loss_parts_from_trace(const ModelParams& model, const ForwardTrace& trace,
                                const Batch& batch, const LossSpec& spec);

// Pure convenience wrapper: forward in the given mode (train is rejected,
// it would mutate running statistics), then assemble the parts.
LossParts total_loss(const ModelParams& model, const Batch& batch, const LossSpec& spec,
                     RunMode mode = RunMode::train_frozen);

// Fraction of rows whose arg-max logit matches the label, evaluated with
// running statistics. Ties resolve to the lowest class index.
double accuracy(const ModelParams& model, const Batch& batch);

} // namespace metafed
