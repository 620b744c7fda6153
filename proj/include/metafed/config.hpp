#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metafed/protocol.hpp"

namespace metafed {

// Everything a run needs, with defaults matching the stock synthetic
// label-shift benchmark. Loaded from an INI-style file with sections
// [data], [model], [train], [run]; every key optional.
struct ExperimentConfig {
    // [data]
    std::string generator = "label_shift";  // label_shift | feature_shift | csv
    std::size_t federations = 20;
    std::size_t pool_samples = 6000;
    std::size_t dim = 20;
    std::size_t classes = 10;
    double class_sep = 2.5;
    double alpha = 0.5;
    double train_fraction = 0.4;
    double valid_fraction = 0.3;
    double test_fraction = 0.3;
    double shift_scale = 1.0;
    std::size_t samples_per_federation = 1000;
    std::string csv_path;

    // [model]
    std::size_t hidden = 32;
    bool with_norm = true;

    // [train]
    HyperParams hp;

    // [run]
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    std::string out_dir = "out";

    void validate() const;
};

// Parses the file and layers it over the defaults. Unknown sections or keys
// and malformed values are reported with their line number.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

// The full default configuration, printable and re-parseable.
std::string default_config_text();

} // namespace metafed
