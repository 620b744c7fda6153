#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "metafed/dataset.hpp"
#include "metafed/model.hpp"
#include "metafed/rng.hpp"
#include "metafed/trace.hpp"

namespace metafed {

enum class Mode {
    metafed,
    metafed_pp,
    fedavg,
    fedprox,
    fedbn,
    local,
    finetune_ablation,
    no_stage1,
    no_stage2,
};

std::string mode_name(Mode mode);
Mode mode_from_name(const std::string& name);

enum class OrderKind { index, seeded_random, explicit_list };

struct HyperParams {
    double lambda0 = 0.1;
    double l_t1 = 0.5;
    double l_t2 = 0.5;
    std::size_t rounds_stage1 = 5;
    std::size_t local_iters = 50;
    double lr = 0.01;
    std::size_t batch_size = 32;
    Tap tap = Tap::penultimate;
    bool share_norm = false;  // false keeps each federation's norm state local on copy
    OrderKind order_kind = OrderKind::index;
    std::uint64_t order_seed = 0;
    std::vector<std::size_t> explicit_order;
    Mode mode = Mode::metafed;
    double prox_mu = 0.01;
    bool early_stop = false;
    std::size_t group_count = 0;                   // k for feature-statistic grouping
    std::vector<std::vector<std::size_t>> groups;  // explicit grouping wins over group_count

    void validate() const;
};

// Stop knowledge accumulation once the mean valid accuracy improves by less
// than this for two consecutive rounds (only when early_stop is on).
inline constexpr double kEarlyStopDelta = 1e-3;
inline constexpr int kEarlyStopPatience = 2;

// Epoch-shuffling minibatch stream. Each federation owns one, so training
// consumes the same batches no matter which protocol is driving it.
class BatchSampler {
  public:
    BatchSampler() = default;
    BatchSampler(std::uint64_t seed, std::size_t batch_size);
    Batch next(const Dataset& train);

  private:
    Rng rng_{0};
    std::size_t batch_size_ = 1;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

struct Federation {
    std::size_t id = 0;
    FederationData data;
    ModelParams model;
    double last_valid_acc = 0.0;
    BatchSampler sampler;
};

struct RunResult {
    std::vector<ModelParams> models;  // one per federation, in id order
    std::optional<ModelParams> common;
    RunTrace trace;
    std::vector<double> final_test_acc;
};

double evaluate(const ModelParams& model, const Dataset& data);

// Orders the given federation ids: as-is, seeded shuffle, or the explicit
// list filtered down to `ids` while keeping its sequence.
std::vector<std::size_t> resolve_order(const HyperParams& hp, const std::vector<std::size_t>& ids);

// Seeded k-means over per-federation feature statistics (per-dimension mean
// and variance of the training inputs). Groups come back sorted by their
// smallest member, members ascending.
std::vector<std::vector<std::size_t>> group_by_feature_stats(const FederatedSplit& split,
                                                             std::size_t group_count,
                                                             std::uint64_t seed);

std::vector<Federation> make_federations(const FederatedSplit& split, const ModelParams& init,
                                         const HyperParams& hp, std::uint64_t seed);

// One cyclic pass: each position's federation receives its ring
// predecessor's model, picks the distill-or-copy branch against l_t1, and
// trains. `order` holds positions into `feds`; `round_no` labels the rows.
void stage1_round(std::vector<Federation>& feds, const std::vector<std::size_t>& order,
                  const HyperParams& hp, int round_no, RunTrace& trace, bool force_lambda_zero);

// Local pretraining plus rounds_stage1 cyclic passes (fewer if early stop
// fires). Returns the common model: the last-trained federation's.
ModelParams run_stage1(std::vector<Federation>& feds, const std::vector<std::size_t>& order,
                       const HyperParams& hp, RunTrace& trace, bool force_lambda_zero,
                       int* rounds_run = nullptr);

// Personalization pass: the common model visits every federation unchanged;
// each picks lambda from its accuracy gap (or zero) and keeps the best
// checkpoint its valid set sees.
void run_stage2(std::vector<Federation>& feds, const std::vector<std::size_t>& order,
                const ModelParams& common, const HyperParams& hp, int round_no, RunTrace& trace,
                bool force_lambda_zero);

// Train-size-weighted mean of the federations' parameters, assembled into a
// copy of previous_global. fedbn keeps previous_global's normalization
// layers untouched; the other variants average norm statistics and affine
// parameters along with the weights.
ModelParams aggregate_models(const std::vector<Federation>& feds, Mode variant,
                             const ModelParams& previous_global);

// Server-mediated baselines sharing one round structure: download global,
// train locally (fedprox adds the proximal pull toward the downloaded
// model), upload, aggregate weighted by train size. fedbn keeps every
// normalization layer local and out of the payloads. Returns the final
// global model and leaves each federation holding its personalized copy.
ModelParams run_fedavg(std::vector<Federation>& feds, const HyperParams& hp, Mode variant,
                       const ModelParams& init, RunTrace& trace);

// Grouped variant: knowledge accumulation within each group, one cyclic
// exchange across the group common models when there is more than one
// group, then personalization inside each group.
void run_metafed_pp(std::vector<Federation>& feds, const HyperParams& hp, RunTrace& trace,
                    std::uint64_t seed, std::optional<ModelParams>& common_out);

// Runs the configured mode end to end on a fresh set of federations, all
// starting from `init`.
RunResult run_protocol(const FederatedSplit& split, const ModelParams& init,
                       const HyperParams& hp, std::uint64_t seed);

} // namespace metafed
