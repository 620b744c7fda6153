#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "metafed/config.hpp"
#include "metafed/errors.hpp"
#include "metafed/harness.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string mode;
    long long seed = -1;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "INI config file; defaults used when omitted");
    cmd->add_option("--out", flags.out_dir, "output directory override");
    cmd->add_option("--mode", flags.mode, "mode override (metafed, fedavg, ...)");
    cmd->add_option("--seed", flags.seed, "run a single seed instead of the configured list");
}

metafed::ExperimentConfig resolve(const CommonFlags& flags) {
    metafed::ExperimentConfig cfg;
    if (!flags.config_path.empty()) cfg = metafed::load_config(flags.config_path);
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    if (!flags.mode.empty()) cfg.hp.mode = metafed::mode_from_name(flags.mode);
    if (flags.seed >= 0) cfg.seeds = {static_cast<std::uint64_t>(flags.seed)};
    cfg.validate();
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Serverless federated learning simulator"};
    app.require_subcommand(0, 1);

    bool print_defaults = false;
    app.add_flag("--print-defaults", print_defaults, "print the default config and exit");

    CommonFlags run_flags, sweep_flags, ablate_flags, gen_flags;
    std::string axis;

    CLI::App* run_cmd = app.add_subcommand("run", "run the configured mode over all seeds");
    add_common(run_cmd, run_flags);

    CLI::App* sweep_cmd = app.add_subcommand("sweep", "grid sweep along one hyperparameter axis");
    add_common(sweep_cmd, sweep_flags);
    sweep_cmd->add_option("--axis", axis, "lambda0 | l_t1 | tap | share_norm | order | budget")
        ->required();

    CLI::App* ablate_cmd = app.add_subcommand("ablate", "paired comparison of every mode");
    add_common(ablate_cmd, ablate_flags);

    CLI::App* gen_cmd = app.add_subcommand("gen-data", "write the configured splits as CSVs");
    add_common(gen_cmd, gen_flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (print_defaults) {
            std::fputs(metafed::default_config_text().c_str(), stdout);
            return 0;
        }
        if (run_cmd->parsed()) {
            const auto result = metafed::run_experiment(resolve(run_flags));
            for (const auto& seed : result.seeds) {
                if (seed.ok) {
                    std::printf("seed %llu: average test acc %.4f, %zu bytes\n",
                                static_cast<unsigned long long>(seed.seed), seed.average_acc,
                                seed.total_bytes);
                } else {
                    std::printf("seed %llu: FAILED: %s\n",
                                static_cast<unsigned long long>(seed.seed), seed.error.c_str());
                }
            }
            std::printf("%s: %.4f +/- %.4f over %zu seed(s)\n", result.mode.c_str(),
                        result.mean_acc, result.std_acc, result.seeds.size());
            return result.any_ok() ? 0 : 2;
        }
        if (sweep_cmd->parsed()) {
            const auto rows = metafed::run_sweep(resolve(sweep_flags), axis);
            for (const auto& row : rows) {
                std::printf("%s=%s mode=%s rounds=%zu iters=%zu acc=%.4f +/- %.4f bytes=%zu\n",
                            row.axis.c_str(), row.value.c_str(), row.mode.c_str(), row.rounds,
                            row.local_iters, row.mean_acc, row.std_acc, row.total_bytes);
            }
            return 0;
        }
        if (ablate_cmd->parsed()) {
            const auto rows = metafed::run_ablation(resolve(ablate_flags));
            for (const auto& row : rows) {
                std::printf("%-18s acc=%.4f +/- %.4f bytes=%zu\n", row.mode.c_str(),
                            row.mean_acc, row.std_acc, row.total_bytes);
            }
            return 0;
        }
        if (gen_cmd->parsed()) {
            metafed::generate_data(resolve(gen_flags));
            return 0;
        }
        std::fputs(app.help().c_str(), stdout);
        return 0;
    } catch (const metafed::config_error& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 2;
    }
}
