#include "metafed/harness.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "metafed/errors.hpp"
#include "metafed/serialize.hpp"

namespace metafed {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

std::string fmt_exact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw input_error("cannot open " + path + " for writing");
    out << text;
    if (!out) throw input_error("short write to " + path);
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
    write_text(path, j.dump(2) + "\n");
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_dataset(std::vector<std::uint8_t>& out, const Dataset& data) {
    put_u32(out, static_cast<std::uint32_t>(data.inputs.rows()));
    put_u32(out, static_cast<std::uint32_t>(data.inputs.cols()));
    put_u32(out, static_cast<std::uint32_t>(data.class_count));
    for (double v : data.inputs.data()) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
    for (int label : data.labels) put_u32(out, static_cast<std::uint32_t>(label));
}

// Mean and population standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return {mean, std::sqrt(var)};
}

std::uint64_t combine_checksums(const ExperimentResult& result) {
    std::vector<std::uint8_t> bytes;
    for (const auto& seed : result.seeds) {
        for (int i = 0; i < 8; ++i) {
            bytes.push_back(static_cast<std::uint8_t>(seed.split_checksum >> (8 * i)));
        }
    }
    return fnv1a64(bytes);
}

const SeedOutcome* first_ok(const ExperimentResult& result) {
    for (const auto& seed : result.seeds) {
        if (seed.ok) return &seed;
    }
    return nullptr;
}

SweepRow make_sweep_row(const std::string& axis, const std::string& value,
                        const ExperimentConfig& cfg, const ExperimentResult& result) {
    SweepRow row;
    row.axis = axis;
    row.value = value;
    row.mode = result.mode;
    row.rounds = cfg.hp.rounds_stage1;
    row.local_iters = cfg.hp.local_iters;
    row.mean_acc = result.mean_acc;
    row.std_acc = result.std_acc;
    row.split_checksum = combine_checksums(result);
    if (const SeedOutcome* ok = first_ok(result)) row.total_bytes = ok->total_bytes;
    return row;
}

nlohmann::json sweep_row_json(const SweepRow& row) {
    return nlohmann::json{
        {"axis", row.axis},
        {"value", row.value},
        {"mode", row.mode},
        {"rounds", row.rounds},
        {"local_iters", row.local_iters},
        {"steps", row.rounds * row.local_iters},
        {"mean_acc", row.mean_acc},
        {"std_acc", row.std_acc},
        {"total_bytes", row.total_bytes},
        {"split_checksum", row.split_checksum},
    };
}

void write_sweep_files(const std::string& out_dir, const std::string& axis,
                       const std::vector<SweepRow>& rows) {
    std::string csv =
        "axis,value,mode,rounds,local_iters,steps,mean_acc,std_acc,total_bytes,split_checksum\n";
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& row : rows) {
        csv += row.axis + "," + row.value + "," + row.mode + "," + std::to_string(row.rounds) +
               "," + std::to_string(row.local_iters) + "," +
               std::to_string(row.rounds * row.local_iters) + "," + fmt_exact(row.mean_acc) +
               "," + fmt_exact(row.std_acc) + "," + std::to_string(row.total_bytes) + "," +
               std::to_string(row.split_checksum) + "\n";
        rows_json.push_back(sweep_row_json(row));
    }
    write_text(out_dir + "/sweep_" + axis + ".csv", csv);
    write_json_file(out_dir + "/sweep_" + axis + ".json", rows_json);
}

void check_paired(const std::vector<SweepRow>& rows) {
    for (const auto& row : rows) {
        if (row.split_checksum != rows.front().split_checksum) {
            throw protocol_error("sweep rows ran on different splits");
        }
    }
}

} // namespace

bool ExperimentResult::any_ok() const {
    for (const auto& seed : seeds) {
        if (seed.ok) return true;
    }
    return false;
}

std::uint64_t split_checksum(const FederatedSplit& split) {
    std::vector<std::uint8_t> bytes;
    put_u32(bytes, static_cast<std::uint32_t>(split.size()));
    for (const auto& fed : split) {
        put_dataset(bytes, fed.train);
        put_dataset(bytes, fed.valid);
        put_dataset(bytes, fed.test);
    }
    return fnv1a64(bytes);
}

FederatedSplit build_split(const ExperimentConfig& cfg, std::uint64_t seed) {
    if (cfg.generator == "feature_shift") {
        return gen_feature_shift(cfg.classes, cfg.dim, cfg.federations, cfg.shift_scale, seed,
                                 cfg.samples_per_federation);
    }
    Dataset pool;
    if (cfg.generator == "csv") {
        pool = load_csv(cfg.csv_path);
    } else {
        pool = make_gaussian_pool(cfg.pool_samples, cfg.dim, cfg.classes, cfg.class_sep, seed);
    }
    PartitionSpec spec;
    spec.federation_count = cfg.federations;
    spec.alpha = cfg.alpha;
    spec.train_fraction = cfg.train_fraction;
    spec.valid_fraction = cfg.valid_fraction;
    spec.test_fraction = cfg.test_fraction;
    spec.seed = seed;
    return gen_label_shift(pool, spec);
}

ModelParams build_init_model(const ExperimentConfig& cfg, const FederatedSplit& split,
                             std::uint64_t seed) {
    if (split.empty()) throw config_error("empty split");
    const std::size_t in_dim = split.front().train.dim();
    const std::size_t classes = static_cast<std::size_t>(split.front().train.class_count);
    return make_mlp({in_dim, cfg.hidden, cfg.hidden, classes}, cfg.with_norm, 2,
                    mix_seed(seed, 0x696e6974 /* "init" */));
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    std::filesystem::create_directories(cfg.out_dir);

    ExperimentResult result;
    result.mode = mode_name(cfg.hp.mode);

    for (std::uint64_t seed : cfg.seeds) {
        SeedOutcome outcome;
        outcome.seed = seed;
        try {
            const FederatedSplit split = build_split(cfg, seed);
            outcome.split_checksum = split_checksum(split);
            const ModelParams init = build_init_model(cfg, split, seed);
            RunResult run = run_protocol(split, init, cfg.hp, seed);

            outcome.final_test_acc = run.final_test_acc;
            const auto [mean, _] = mean_std(run.final_test_acc);
            outcome.average_acc = mean;
            outcome.total_bytes = run.trace.total_bytes();
            outcome.trace = std::move(run.trace);

            const std::string base =
                cfg.out_dir + "/" + result.mode + "_seed" + std::to_string(seed);
            write_trace_csv(outcome.trace, base + "_trace.csv");
            write_json_file(base + "_summary.json",
                            summary_json(result.mode, seed, outcome.split_checksum,
                                         outcome.final_test_acc, outcome.total_bytes));
            outcome.ok = true;
        } catch (const std::exception& e) {
            outcome.ok = false;
            outcome.error = e.what();
        }
        result.seeds.push_back(std::move(outcome));
    }

    std::vector<double> averages;
    for (const auto& seed : result.seeds) {
        if (seed.ok) averages.push_back(seed.average_acc);
    }
    const auto [mean, sd] = mean_std(averages);
    result.mean_acc = mean;
    result.std_acc = sd;

    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& seed : result.seeds) {
        nlohmann::json entry{{"seed", seed.seed}, {"ok", seed.ok}};
        if (seed.ok) {
            entry["average_acc"] = seed.average_acc;
            entry["total_bytes"] = seed.total_bytes;
            entry["split_checksum"] = seed.split_checksum;
        } else {
            entry["error"] = seed.error;
        }
        per_seed.push_back(entry);
    }
    write_json_file(cfg.out_dir + "/" + result.mode + "_summary.json",
                    nlohmann::json{{"mode", result.mode},
                                   {"seeds", per_seed},
                                   {"mean_acc", result.mean_acc},
                                   {"std_acc", result.std_acc}});
    return result;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::string& axis) {
    cfg.validate();
    std::filesystem::create_directories(cfg.out_dir);
    std::vector<SweepRow> rows;

    const auto run_point = [&](ExperimentConfig point, const std::string& value,
                               const std::string& subdir) {
        point.out_dir = cfg.out_dir + "/sweep_" + axis + "/" + subdir;
        const ExperimentResult result = run_experiment(point);
        rows.push_back(make_sweep_row(axis, value, point, result));
    };

    if (axis == "lambda0") {
        for (double v : {0.1, 1.0, 5.0, 10.0}) {
            ExperimentConfig point = cfg;
            point.hp.lambda0 = v;
            run_point(point, fmt_double(v), fmt_double(v));
        }
    } else if (axis == "l_t1") {
        for (double v : {0.0, 0.4, 0.5, 0.6, 1.1}) {
            ExperimentConfig point = cfg;
            point.hp.l_t1 = v;
            run_point(point, fmt_double(v), fmt_double(v));
        }
    } else if (axis == "tap") {
        for (Tap tap : {Tap::penultimate, Tap::last_hidden_block, Tap::combined}) {
            ExperimentConfig point = cfg;
            point.hp.tap = tap;
            run_point(point, tap_name(tap), tap_name(tap));
        }
    } else if (axis == "share_norm") {
        for (bool v : {true, false}) {
            ExperimentConfig point = cfg;
            point.hp.share_norm = v;
            run_point(point, v ? "true" : "false", v ? "true" : "false");
        }
    } else if (axis == "order") {
        {
            ExperimentConfig point = cfg;
            point.hp.order_kind = OrderKind::index;
            run_point(point, "index", "index");
        }
        for (std::uint64_t s : {1, 2, 3}) {
            ExperimentConfig point = cfg;
            point.hp.order_kind = OrderKind::seeded_random;
            point.hp.order_seed = s;
            run_point(point, "shuffle" + std::to_string(s), "shuffle" + std::to_string(s));
        }
    } else if (axis == "budget") {
        const std::vector<std::size_t> grid = {1, 2, 3, 5, 10};
        std::size_t lcm = 1;
        for (std::size_t r : grid) lcm = std::lcm(lcm, r);
        const std::size_t base = cfg.hp.rounds_stage1 * cfg.hp.local_iters;
        const std::size_t steps = ((base + lcm - 1) / lcm) * lcm;
        for (std::size_t r : grid) {
            ExperimentConfig point = cfg;
            point.hp.rounds_stage1 = r;
            point.hp.local_iters = steps / r;
            run_point(point, std::to_string(r), "rounds" + std::to_string(r));
        }
        for (std::size_t r : grid) {
            ExperimentConfig point = cfg;
            point.hp.mode = Mode::fedavg;
            point.hp.rounds_stage1 = r;
            point.hp.local_iters = steps / r;
            run_point(point, std::to_string(r), "fedavg_rounds" + std::to_string(r));
        }
        for (const auto& row : rows) {
            if (row.rounds * row.local_iters != steps) {
                throw protocol_error("budget sweep lost the constant-step invariant");
            }
        }
    } else {
        throw config_error("unknown sweep axis '" + axis + "'");
    }

    check_paired(rows);
    write_sweep_files(cfg.out_dir, axis, rows);
    return rows;
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg) {
    cfg.validate();
    std::filesystem::create_directories(cfg.out_dir);

    const Mode modes[] = {Mode::metafed, Mode::finetune_ablation, Mode::no_stage1,
                          Mode::no_stage2, Mode::fedavg, Mode::fedprox, Mode::fedbn, Mode::local};
    std::vector<AblationRow> rows;
    for (Mode mode : modes) {
        ExperimentConfig point = cfg;
        point.hp.mode = mode;
        point.out_dir = cfg.out_dir + "/ablation/" + mode_name(mode);
        const ExperimentResult result = run_experiment(point);

        AblationRow row;
        row.mode = mode_name(mode);
        row.mean_acc = result.mean_acc;
        row.std_acc = result.std_acc;
        row.split_checksum = combine_checksums(result);
        if (const SeedOutcome* ok = first_ok(result)) {
            row.total_bytes = ok->total_bytes;
            row.per_fed_acc.assign(ok->final_test_acc.size(), 0.0);
            std::size_t ok_count = 0;
            for (const auto& seed : result.seeds) {
                if (!seed.ok) continue;
                ++ok_count;
                for (std::size_t i = 0; i < row.per_fed_acc.size(); ++i) {
                    row.per_fed_acc[i] += seed.final_test_acc[i];
                }
            }
            for (double& v : row.per_fed_acc) v /= static_cast<double>(ok_count);
        }
        rows.push_back(std::move(row));
    }

    for (const auto& row : rows) {
        if (row.split_checksum != rows.front().split_checksum) {
            throw protocol_error("ablation rows ran on different splits");
        }
    }

    std::string csv = "mode,mean_acc,std_acc,total_bytes,split_checksum,per_federation\n";
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& row : rows) {
        std::string per_fed;
        for (std::size_t i = 0; i < row.per_fed_acc.size(); ++i) {
            if (i > 0) per_fed += ";";
            per_fed += fmt_exact(row.per_fed_acc[i]);
        }
        csv += row.mode + "," + fmt_exact(row.mean_acc) + "," + fmt_exact(row.std_acc) + "," +
               std::to_string(row.total_bytes) + "," + std::to_string(row.split_checksum) + "," +
               per_fed + "\n";
        rows_json.push_back(nlohmann::json{{"mode", row.mode},
                                           {"mean_acc", row.mean_acc},
                                           {"std_acc", row.std_acc},
                                           {"total_bytes", row.total_bytes},
                                           {"split_checksum", row.split_checksum},
                                           {"per_federation", row.per_fed_acc}});
    }
    write_text(cfg.out_dir + "/ablation.csv", csv);
    write_json_file(cfg.out_dir + "/ablation.json", rows_json);
    return rows;
}

void generate_data(const ExperimentConfig& cfg) {
    cfg.validate();
    for (std::uint64_t seed : cfg.seeds) {
        const FederatedSplit split = build_split(cfg, seed);
        const std::string dir = cfg.out_dir + "/data_seed" + std::to_string(seed);
        export_split(split, dir);
        write_json_file(dir + "/manifest.json",
                        nlohmann::json{{"generator", cfg.generator},
                                       {"seed", seed},
                                       {"federations", split.size()},
                                       {"split_checksum", split_checksum(split)}});
    }
}

} // namespace metafed
