#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metafed/config.hpp"
#include "metafed/dataset.hpp"
#include "metafed/protocol.hpp"
#include "metafed/trace.hpp"

namespace metafed {

// What one seed produced: either a complete run (trace kept in memory,
// files on disk) or the error that stopped it.
struct SeedOutcome {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    std::vector<double> final_test_acc;
    double average_acc = 0.0;
    std::size_t total_bytes = 0;
    std::uint64_t split_checksum = 0;
    RunTrace trace;
};

struct ExperimentResult {
    std::string mode;
    std::vector<SeedOutcome> seeds;
    double mean_acc = 0.0;  // across successful seeds
    double std_acc = 0.0;
    bool any_ok() const;
};

struct SweepRow {
    std::string axis;
    std::string value;
    std::string mode;
    std::size_t rounds = 0;
    std::size_t local_iters = 0;
    double mean_acc = 0.0;
    double std_acc = 0.0;
    std::size_t total_bytes = 0;
    std::uint64_t split_checksum = 0;  // combined over seeds; equal rows ran paired
};

struct AblationRow {
    std::string mode;
    std::vector<double> per_fed_acc;  // per federation, averaged over seeds
    double mean_acc = 0.0;
    double std_acc = 0.0;
    std::size_t total_bytes = 0;
    std::uint64_t split_checksum = 0;
};

// Checksum over every sample, label, and part size of the split; equal
// checksums mean the federations saw identical data.
std::uint64_t split_checksum(const FederatedSplit& split);

FederatedSplit build_split(const ExperimentConfig& cfg, std::uint64_t seed);
ModelParams build_init_model(const ExperimentConfig& cfg, const FederatedSplit& split,
                             std::uint64_t seed);

// Runs the configured mode once per seed, writing per-seed trace CSV and
// summary JSON plus an aggregate summary under cfg.out_dir. A failing seed
// is recorded in the aggregate instead of aborting the others.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Grid sweep along one axis: lambda0, l_t1, tap, share_norm, order, or
// budget (round count with total steps held constant, plus reference rows
// for the server baseline). Writes sweep_<axis>.csv/.json.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::string& axis);

// Paired comparison of every mode on identical splits and seeds. Writes
// ablation.csv/.json.
std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg);

// Materializes the configured splits as CSV files for inspection.
void generate_data(const ExperimentConfig& cfg);

} // namespace metafed
