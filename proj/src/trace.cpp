#include "metafed/trace.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "metafed/errors.hpp"

namespace metafed {

std::string stage_name(Stage stage) {
    switch (stage) {
        case Stage::pretrain: return "pretrain";
        case Stage::stage1: return "stage1";
        case Stage::inter: return "inter";
        case Stage::stage2: return "stage2";
        case Stage::round: return "round";
        case Stage::local: return "local";
    }
    throw config_error("unknown stage");
}

std::string branch_name(Branch branch) {
    switch (branch) {
        case Branch::local: return "local";
        case Branch::distill: return "distill";
        case Branch::copy: return "copy";
        case Branch::adapt: return "adapt";
        case Branch::zero: return "zero";
        case Branch::train: return "train";
    }
    throw config_error("unknown branch");
}

std::size_t RunTrace::total_bytes() const {
    std::size_t total = 0;
    for (const auto& row : rows) total += row.bytes_sent;
    return total;
}

int RunTrace::last_round() const {
    int last = 0;
    for (const auto& row : rows) last = std::max(last, row.round);
    return last;
}

CommCost comm_cost(const RunTrace& trace) {
    return CommCost{trace.total_bytes(), trace.last_round()};
}

namespace {

void append_double(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out += buf;
}

} // namespace

std::string trace_csv_string(const RunTrace& trace) {
    std::string out =
        "round,federation,stage,branch,lambda,loss_cls,loss_dist,valid_acc,test_acc,bytes_sent\n";
    for (const auto& row : trace.rows) {
        out += std::to_string(row.round);
        out += ',';
        out += std::to_string(row.federation);
        out += ',';
        out += stage_name(row.stage);
        out += ',';
        out += branch_name(row.branch);
        out += ',';
        append_double(out, row.lambda);
        out += ',';
        append_double(out, row.loss_cls);
        out += ',';
        append_double(out, row.loss_dist);
        out += ',';
        append_double(out, row.valid_acc);
        out += ',';
        append_double(out, row.test_acc);
        out += ',';
        out += std::to_string(row.bytes_sent);
        out += '\n';
    }
    return out;
}

void write_trace_csv(const RunTrace& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw input_error("cannot open " + path + " for writing");
    out << trace_csv_string(trace);
    if (!out) throw input_error("short write to " + path);
}

nlohmann::json summary_json(const std::string& mode, std::uint64_t seed,
                            std::uint64_t split_checksum,
                            const std::vector<double>& final_test_acc,
                            std::size_t total_bytes) {
    double sum = 0.0;
    for (double v : final_test_acc) sum += v;
    nlohmann::json per_fed = nlohmann::json::array();
    for (double v : final_test_acc) per_fed.push_back(v);
    return nlohmann::json{
        {"mode", mode},
        {"seed", seed},
        {"split_checksum", split_checksum},
        {"final_test_acc", per_fed},
        {"average_test_acc", final_test_acc.empty() ? 0.0 : sum / final_test_acc.size()},
        {"total_bytes", total_bytes},
    };
}

} // namespace metafed
