#include "metafed/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "metafed/errors.hpp"

namespace metafed {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

[[noreturn]] void bad_value(std::size_t line, const std::string& key, const std::string& value) {
    throw config_error("line " + std::to_string(line) + ": bad value '" + value + "' for " + key);
}

double to_double(std::size_t line, const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) bad_value(line, key, value);
        return v;
    } catch (const config_error&) {
        throw;
    } catch (...) {
        bad_value(line, key, value);
    }
}

std::size_t to_count(std::size_t line, const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used != value.size() || v < 0) bad_value(line, key, value);
        return static_cast<std::size_t>(v);
    } catch (const config_error&) {
        throw;
    } catch (...) {
        bad_value(line, key, value);
    }
}

bool to_bool(std::size_t line, const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    bad_value(line, key, value);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string part;
    std::stringstream ss(s);
    while (std::getline(ss, part, sep)) {
        const std::string t = trim(part);
        if (!t.empty()) parts.push_back(t);
    }
    return parts;
}

Tap tap_from(std::size_t line, const std::string& value) {
    try {
        return tap_from_name(value);
    } catch (const std::exception&) {
        bad_value(line, "tap", value);
    }
}

void apply(ExperimentConfig& cfg, const std::string& section, const std::string& key,
           const std::string& value, std::size_t line) {
    const auto unknown = [&]() -> void {
        throw config_error("line " + std::to_string(line) + ": unknown key '" + key +
                           "' in section [" + section + "]");
    };

    if (section == "data") {
        if (key == "generator") {
            if (value != "label_shift" && value != "feature_shift" && value != "csv") {
                bad_value(line, key, value);
            }
            cfg.generator = value;
        } else if (key == "federations") {
            cfg.federations = to_count(line, key, value);
        } else if (key == "pool_samples") {
            cfg.pool_samples = to_count(line, key, value);
        } else if (key == "dim") {
            cfg.dim = to_count(line, key, value);
        } else if (key == "classes") {
            cfg.classes = to_count(line, key, value);
        } else if (key == "class_sep") {
            cfg.class_sep = to_double(line, key, value);
        } else if (key == "alpha") {
            cfg.alpha = to_double(line, key, value);
        } else if (key == "train_fraction") {
            cfg.train_fraction = to_double(line, key, value);
        } else if (key == "valid_fraction") {
            cfg.valid_fraction = to_double(line, key, value);
        } else if (key == "test_fraction") {
            cfg.test_fraction = to_double(line, key, value);
        } else if (key == "shift_scale") {
            cfg.shift_scale = to_double(line, key, value);
        } else if (key == "samples_per_federation") {
            cfg.samples_per_federation = to_count(line, key, value);
        } else if (key == "csv_path") {
            cfg.csv_path = value;
        } else {
            unknown();
        }
    } else if (section == "model") {
        if (key == "hidden") {
            cfg.hidden = to_count(line, key, value);
        } else if (key == "with_norm") {
            cfg.with_norm = to_bool(line, key, value);
        } else {
            unknown();
        }
    } else if (section == "train") {
        auto& hp = cfg.hp;
        if (key == "lambda0") {
            hp.lambda0 = to_double(line, key, value);
        } else if (key == "l_t1") {
            hp.l_t1 = to_double(line, key, value);
        } else if (key == "l_t2") {
            hp.l_t2 = to_double(line, key, value);
        } else if (key == "rounds_stage1") {
            hp.rounds_stage1 = to_count(line, key, value);
        } else if (key == "local_iters") {
            hp.local_iters = to_count(line, key, value);
        } else if (key == "lr") {
            hp.lr = to_double(line, key, value);
        } else if (key == "batch_size") {
            hp.batch_size = to_count(line, key, value);
        } else if (key == "tap") {
            hp.tap = tap_from(line, value);
        } else if (key == "share_norm") {
            hp.share_norm = to_bool(line, key, value);
        } else if (key == "order") {
            if (value == "index") {
                hp.order_kind = OrderKind::index;
            } else if (value == "random") {
                hp.order_kind = OrderKind::seeded_random;
            } else if (value == "explicit") {
                hp.order_kind = OrderKind::explicit_list;
            } else {
                bad_value(line, key, value);
            }
        } else if (key == "order_seed") {
            hp.order_seed = to_count(line, key, value);
        } else if (key == "explicit_order") {
            hp.explicit_order.clear();
            for (const auto& part : split_on(value, ',')) {
                hp.explicit_order.push_back(to_count(line, key, part));
            }
        } else if (key == "prox_mu") {
            hp.prox_mu = to_double(line, key, value);
        } else if (key == "early_stop") {
            hp.early_stop = to_bool(line, key, value);
        } else if (key == "group_count") {
            hp.group_count = to_count(line, key, value);
        } else if (key == "groups") {
            hp.groups.clear();
            for (const auto& group : split_on(value, ';')) {
                std::vector<std::size_t> ids;
                for (const auto& part : split_on(group, ',')) {
                    ids.push_back(to_count(line, key, part));
                }
                hp.groups.push_back(std::move(ids));
            }
        } else {
            unknown();
        }
    } else if (section == "run") {
        if (key == "mode") {
            try {
                cfg.hp.mode = mode_from_name(value);
            } catch (const std::exception&) {
                bad_value(line, key, value);
            }
        } else if (key == "seeds") {
            cfg.seeds.clear();
            for (const auto& part : split_on(value, ',')) {
                cfg.seeds.push_back(to_count(line, key, part));
            }
        } else if (key == "out") {
            cfg.out_dir = value;
        } else {
            unknown();
        }
    } else {
        throw config_error("line " + std::to_string(line) + ": unknown section [" + section +
                           "]");
    }
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

} // namespace

void ExperimentConfig::validate() const {
    if (generator == "csv" && csv_path.empty()) {
        throw config_error("generator csv needs csv_path");
    }
    if (generator == "label_shift" || generator == "csv") {
        PartitionSpec spec;
        spec.federation_count = federations;
        spec.alpha = alpha;
        spec.train_fraction = train_fraction;
        spec.valid_fraction = valid_fraction;
        spec.test_fraction = test_fraction;
        spec.validate();
    }
    if (federations == 0) throw config_error("federations must be positive");
    if (hidden == 0) throw config_error("hidden width must be positive");
    if (seeds.empty()) throw config_error("need at least one seed");
    if (out_dir.empty()) throw config_error("output directory must be set");
    hp.validate();
}

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::stringstream ss(text);
    std::string line;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') {
                throw config_error("line " + std::to_string(line_no) + ": unterminated section");
            }
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw config_error("line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (section.empty()) {
            throw config_error("line " + std::to_string(line_no) + ": key before any section");
        }
        apply(cfg, section, key, value, line_no);
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str());
}

std::string default_config_text() {
    const ExperimentConfig cfg;
    std::string out;
    out += "[data]\n";
    out += "generator = " + cfg.generator + "\n";
    out += "federations = " + std::to_string(cfg.federations) + "\n";
    out += "pool_samples = " + std::to_string(cfg.pool_samples) + "\n";
    out += "dim = " + std::to_string(cfg.dim) + "\n";
    out += "classes = " + std::to_string(cfg.classes) + "\n";
    out += "class_sep = " + fmt_double(cfg.class_sep) + "\n";
    out += "alpha = " + fmt_double(cfg.alpha) + "\n";
    out += "train_fraction = " + fmt_double(cfg.train_fraction) + "\n";
    out += "valid_fraction = " + fmt_double(cfg.valid_fraction) + "\n";
    out += "test_fraction = " + fmt_double(cfg.test_fraction) + "\n";
    out += "shift_scale = " + fmt_double(cfg.shift_scale) + "\n";
    out += "samples_per_federation = " + std::to_string(cfg.samples_per_federation) + "\n";
    out += "csv_path =\n";
    out += "\n[model]\n";
    out += "hidden = " + std::to_string(cfg.hidden) + "\n";
    out += "with_norm = " + std::string(cfg.with_norm ? "true" : "false") + "\n";
    out += "\n[train]\n";
    out += "lambda0 = " + fmt_double(cfg.hp.lambda0) + "\n";
    out += "l_t1 = " + fmt_double(cfg.hp.l_t1) + "\n";
    out += "l_t2 = " + fmt_double(cfg.hp.l_t2) + "\n";
    out += "rounds_stage1 = " + std::to_string(cfg.hp.rounds_stage1) + "\n";
    out += "local_iters = " + std::to_string(cfg.hp.local_iters) + "\n";
    out += "lr = " + fmt_double(cfg.hp.lr) + "\n";
    out += "batch_size = " + std::to_string(cfg.hp.batch_size) + "\n";
    out += "tap = " + std::string(tap_name(cfg.hp.tap)) + "\n";
    out += "share_norm = " + std::string(cfg.hp.share_norm ? "true" : "false") + "\n";
    out += "order = index\n";
    out += "order_seed = " + std::to_string(cfg.hp.order_seed) + "\n";
    out += "explicit_order =\n";
    out += "prox_mu = " + fmt_double(cfg.hp.prox_mu) + "\n";
    out += "early_stop = " + std::string(cfg.hp.early_stop ? "true" : "false") + "\n";
    out += "group_count = " + std::to_string(cfg.hp.group_count) + "\n";
    out += "groups =\n";
    out += "\n[run]\n";
    out += "mode = " + mode_name(cfg.hp.mode) + "\n";
    std::string seeds;
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
        if (i > 0) seeds += ",";
        seeds += std::to_string(cfg.seeds[i]);
    }
    out += "seeds = " + seeds + "\n";
    out += "out = " + cfg.out_dir + "\n";
    return out;
}

} // namespace metafed
