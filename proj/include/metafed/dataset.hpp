#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metafed/matrix.hpp"
#include "metafed/model.hpp"

namespace metafed {

struct Dataset {
    Matrix inputs;            // n x d
    std::vector<int> labels;  // values in [0, class_count)
    int class_count = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return inputs.cols(); }
    Batch as_batch() const { return Batch{inputs, labels, class_count}; }
    Dataset subset(const std::vector<std::size_t>& indices) const;
    void validate() const;
};

struct FederationData {
    Dataset train, valid, test;
};

using FederatedSplit = std::vector<FederationData>;

struct PartitionSpec {
    std::size_t federation_count = 0;
    double alpha = 0.5;
    double train_fraction = 0.4;
    double valid_fraction = 0.3;
    double test_fraction = 0.3;
    std::uint64_t seed = 0;

    void validate() const;
};

// Pool of class-conditional Gaussians with unit covariance and class means
// separated by roughly `separation`; raw material for the label-shift
// partitioner.
Dataset make_gaussian_pool(std::size_t samples, std::size_t dim, std::size_t classes,
                           double separation, std::uint64_t seed);

// Label-shift partition: per class, a Dirichlet(alpha) draw over federations
// decides how that class's (shuffled) samples are carved up; each federation
// is then split train/valid/test with per-class stratification. Redraws a
// partition that starves any federation (no train sample, or fewer than two
// valid or test samples) up to 100 times before giving up.
FederatedSplit gen_label_shift(const Dataset& pool, const PartitionSpec& spec);

// Feature-shift generator: all federations share the same class-conditional
// Gaussians, but federation j observes them through its own affine map
// A_j x + b_j whose distance from the identity scales with shift_scale.
// Per federation, samples_per_federation points are generated with balanced
// labels; 10% / 10% / 20% of them become train / valid / test and the rest
// are discarded.
FederatedSplit gen_feature_shift(std::size_t class_count, std::size_t dim,
                                 std::size_t federation_count, double shift_scale,
                                 std::uint64_t seed, std::size_t samples_per_federation = 1000);

// Plain-text table: d feature columns then one integer label column. A
// leading header row is skipped when its first field is non-numeric.
Dataset load_csv(const std::string& path);

// One CSV triple per federation (fed0_train.csv, fed0_valid.csv, ...),
// same column layout load_csv reads.
void export_split(const FederatedSplit& split, const std::string& directory);

} // namespace metafed
