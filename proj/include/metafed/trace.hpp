#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace metafed {

enum class Stage { pretrain, stage1, inter, stage2, round, local };
enum class Branch { local, distill, copy, adapt, zero, train };

std::string stage_name(Stage stage);
std::string branch_name(Branch branch);

// One protocol step for one federation. bytes_sent is the payload traffic
// accounted to this step; decision inputs (the accuracies the branch was
// chosen from) ride along for auditing but stay out of the CSV.
struct TraceRow {
    int round = 0;
    int federation = 0;
    Stage stage = Stage::local;
    Branch branch = Branch::local;
    double lambda = 0.0;
    double loss_cls = 0.0;
    double loss_dist = 0.0;
    double valid_acc = 0.0;
    double test_acc = 0.0;
    std::size_t bytes_sent = 0;
    std::size_t bytes_received = 0;
    double acc_common = 0.0;
    double acc_local = 0.0;
};

struct RunTrace {
    std::vector<TraceRow> rows;

    std::size_t total_bytes() const;
    int last_round() const;
};

struct CommCost {
    std::size_t total_bytes = 0;
    int rounds = 0;
};

CommCost comm_cost(const RunTrace& trace);

// CSV with the exact column set
//   round,federation,stage,branch,lambda,loss_cls,loss_dist,valid_acc,test_acc,bytes_sent
// and doubles printed so they round-trip bit-exactly.
void write_trace_csv(const RunTrace& trace, const std::string& path);
std::string trace_csv_string(const RunTrace& trace);

nlohmann::json summary_json(const std::string& mode, std::uint64_t seed,
                            std::uint64_t split_checksum,
                            const std::vector<double>& final_test_acc,
                            std::size_t total_bytes);

} // namespace metafed
