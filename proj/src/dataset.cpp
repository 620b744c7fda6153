#include "metafed/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "metafed/errors.hpp"
#include "metafed/rng.hpp"

namespace metafed {

namespace {

// Largest-remainder apportionment of `total` items over `weights`; the
// counts always sum to total.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights) {
    const std::size_t n = weights.size();
    std::vector<std::size_t> counts(n, 0);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double exact = weights[i] * static_cast<double>(total);
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        assigned += counts[i];
        remainders.emplace_back(exact - std::floor(exact), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < total; ++i, ++assigned) {
        counts[remainders[i % n].second] += 1;
    }
    return counts;
}

std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& data) {
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(data.class_count));
    for (std::size_t i = 0; i < data.size(); ++i) {
        by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
    }
    return by_class;
}

Dataset gather(const Dataset& source, const std::vector<std::size_t>& indices) {
    Dataset out;
    out.class_count = source.class_count;
    out.inputs = Matrix(indices.size(), source.dim());
    out.labels.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto src = source.inputs.row(indices[r]);
        auto dst = out.inputs.row(r);
        std::copy(src.begin(), src.end(), dst.begin());
        out.labels.push_back(source.labels[indices[r]]);
    }
    return out;
}

// Splits one federation's sample indices into train/valid/test, stratified
// per class so each class keeps roughly the global fractions.
FederationData split_federation(const Dataset& pool, const std::vector<std::size_t>& allocation,
                                const PartitionSpec& spec) {
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(pool.class_count));
    for (std::size_t idx : allocation) {
        by_class[static_cast<std::size_t>(pool.labels[idx])].push_back(idx);
    }
    std::vector<std::size_t> train_idx, valid_idx, test_idx;
    const std::vector<double> fractions = {spec.train_fraction, spec.valid_fraction,
                                           spec.test_fraction};
    for (const auto& members : by_class) {
        if (members.empty()) continue;
        const auto counts = apportion(members.size(), fractions);
        std::size_t pos = 0;
        for (std::size_t i = 0; i < counts[0]; ++i) train_idx.push_back(members[pos++]);
        for (std::size_t i = 0; i < counts[1]; ++i) valid_idx.push_back(members[pos++]);
        for (std::size_t i = 0; i < counts[2]; ++i) test_idx.push_back(members[pos++]);
    }
    return FederationData{gather(pool, train_idx), gather(pool, valid_idx),
                          gather(pool, test_idx)};
}

// Class means at the vertices of a randomly oriented regular simplex with
// edge length separation (jittered by 10%), so every pair of classes is
// equally far apart. When there are more classes than dimensions the simplex
// does not fit and independent random directions stand in.
std::vector<std::vector<double>> draw_class_means(std::size_t classes, std::size_t dim,
                                                  double separation, Rng& rng) {
    std::vector<std::vector<double>> means(classes, std::vector<double>(dim, 0.0));
    if (dim >= classes) {
        std::vector<std::vector<double>> basis;
        while (basis.size() < classes) {
            std::vector<double> v(dim);
            for (double& x : v) x = rng.gaussian();
            for (const auto& b : basis) {
                double dot = 0.0;
                for (std::size_t j = 0; j < dim; ++j) dot += v[j] * b[j];
                for (std::size_t j = 0; j < dim; ++j) v[j] -= dot * b[j];
            }
            double norm_sq = 0.0;
            for (double x : v) norm_sq += x * x;
            if (norm_sq < 1e-12) continue;
            const double inv = 1.0 / std::sqrt(norm_sq);
            for (double& x : v) x *= inv;
            basis.push_back(std::move(v));
        }
        // Orthonormal vectors are pairwise sqrt(2) apart; scaling and
        // centering gives the simplex the requested edge without moving the
        // data off the origin.
        const double scale = separation * rng.uniform(0.9, 1.1) / std::sqrt(2.0);
        std::vector<double> centroid(dim, 0.0);
        for (std::size_t k = 0; k < classes; ++k) {
            for (std::size_t j = 0; j < dim; ++j) {
                means[k][j] = scale * basis[k][j];
                centroid[j] += means[k][j] / static_cast<double>(classes);
            }
        }
        for (auto& mean : means) {
            for (std::size_t j = 0; j < dim; ++j) mean[j] -= centroid[j];
        }
        return means;
    }
    for (auto& mean : means) {
        double norm_sq = 0.0;
        for (double& v : mean) {
            v = rng.gaussian();
            norm_sq += v * v;
        }
        const double radius = separation * rng.uniform(0.9, 1.1);
        const double scale = radius / std::sqrt(std::max(norm_sq, 1e-12));
        for (double& v : mean) v *= scale;
    }
    return means;
}

bool looks_numeric(const std::string& field) {
    char* end = nullptr;
    std::strtod(field.c_str(), &end);
    if (end == field.c_str() || end == nullptr) return false;
    for (const char* p = end; *p != '\0'; ++p) {
        if (*p != ' ' && *p != '\t' && *p != '\r') return false;
    }
    return true;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    return fields;
}

void write_csv(const Dataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw input_error("cannot open " + path + " for writing");
    char buf[32];
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto r = data.inputs.row(i);
        for (double v : r) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            out << buf << ',';
        }
        out << data.labels[i] << '\n';
    }
}

} // namespace

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
    for (std::size_t idx : indices) {
        if (idx >= size()) throw input_error("subset index out of range");
    }
    return gather(*this, indices);
}

void Dataset::validate() const {
    if (size() == 0 || dim() == 0) throw input_error("dataset is empty");
    if (inputs.rows() != labels.size()) {
        throw shape_error("dataset input rows do not equal label count");
    }
    for (int label : labels) {
        if (label < 0 || label >= class_count) throw input_error("dataset label out of range");
    }
}

void PartitionSpec::validate() const {
    if (federation_count == 0) throw config_error("federation_count must be positive");
    if (!(alpha > 0.0)) throw config_error("alpha must be positive");
    const double parts[] = {train_fraction, valid_fraction, test_fraction};
    double sum = 0.0;
    for (double p : parts) {
        if (!(p > 0.0)) throw config_error("split fractions must be positive");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw config_error("split fractions must sum to 1");
}

Dataset make_gaussian_pool(std::size_t samples, std::size_t dim, std::size_t classes,
                           double separation, std::uint64_t seed) {
    if (samples < classes || dim == 0 || classes < 2) {
        throw config_error("pool needs at least one sample per class and two classes");
    }
    if (!(separation >= 0.0)) throw config_error("separation must be non-negative");
    Rng rng(mix_seed(seed, 0x706f6f6c /* "pool" */));
    const auto means = draw_class_means(classes, dim, separation, rng);

    Dataset pool;
    pool.class_count = static_cast<int>(classes);
    pool.inputs = Matrix(samples, dim);
    pool.labels.reserve(samples);
    for (std::size_t i = 0; i < samples; ++i) {
        const std::size_t k = i % classes;
        auto row = pool.inputs.row(i);
        for (std::size_t j = 0; j < dim; ++j) row[j] = means[k][j] + rng.gaussian();
        pool.labels.push_back(static_cast<int>(k));
    }
    return pool;
}

FederatedSplit gen_label_shift(const Dataset& pool, const PartitionSpec& spec) {
    pool.validate();
    spec.validate();
    const std::size_t n_fed = spec.federation_count;

    for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
        Rng rng(mix_seed(spec.seed, 0x6c616265 + attempt));

        std::vector<std::vector<std::size_t>> allocations(n_fed);
        for (auto& members : indices_by_class(pool)) {
            rng.shuffle(members);
            const auto proportions = rng.dirichlet(spec.alpha, n_fed);
            const auto counts = apportion(members.size(), proportions);
            std::size_t pos = 0;
            for (std::size_t j = 0; j < n_fed; ++j) {
                for (std::size_t i = 0; i < counts[j]; ++i) {
                    allocations[j].push_back(members[pos++]);
                }
            }
        }

        FederatedSplit split;
        bool starved = false;
        for (const auto& allocation : allocations) {
            FederationData fed = split_federation(pool, allocation, spec);
            if (fed.train.size() < 1 || fed.valid.size() < 2 || fed.test.size() < 2) {
                starved = true;
                break;
            }
            split.push_back(std::move(fed));
        }
        if (!starved) return split;
    }
    throw partition_error(
        "could not allocate every federation enough samples in 100 attempts; "
        "grow the pool or raise alpha");
}

FederatedSplit gen_feature_shift(std::size_t class_count, std::size_t dim,
                                 std::size_t federation_count, double shift_scale,
                                 std::uint64_t seed, std::size_t samples_per_federation) {
    if (class_count < 2 || dim < 2 || federation_count < 2) {
        throw config_error("feature shift needs K >= 2, d >= 2, N >= 2");
    }
    if (!(shift_scale >= 0.0)) throw config_error("shift_scale must be non-negative");
    if (samples_per_federation < 10 * class_count) {
        throw config_error("need at least 10 generated samples per class per federation");
    }

    Rng rng(mix_seed(seed, 0x66656174 /* "feat" */));
    const auto means = draw_class_means(class_count, dim, 2.5, rng);

    const double root_d = std::sqrt(static_cast<double>(dim));
    FederatedSplit split;
    for (std::size_t j = 0; j < federation_count; ++j) {
        // A_j = I + s*E_j with E_j entries ~ N(0, 1/d), b_j ~ s*N(0, 1/d) I.
        Matrix affine(dim, dim);
        for (std::size_t r = 0; r < dim; ++r) {
            for (std::size_t c = 0; c < dim; ++c) {
                affine.at(r, c) = (r == c ? 1.0 : 0.0) + shift_scale * rng.gaussian() / root_d;
            }
        }
        std::vector<double> offset(dim);
        for (double& v : offset) v = shift_scale * rng.gaussian() / root_d;

        const std::size_t per_class = samples_per_federation / class_count;
        Dataset generated;
        generated.class_count = static_cast<int>(class_count);
        generated.inputs = Matrix(per_class * class_count, dim);
        std::vector<double> raw(dim);
        for (std::size_t k = 0; k < class_count; ++k) {
            for (std::size_t i = 0; i < per_class; ++i) {
                for (std::size_t c = 0; c < dim; ++c) raw[c] = means[k][c] + rng.gaussian();
                auto row = generated.inputs.row(k * per_class + i);
                for (std::size_t r = 0; r < dim; ++r) {
                    double v = offset[r];
                    const auto arow = affine.row(r);
                    for (std::size_t c = 0; c < dim; ++c) v += arow[c] * raw[c];
                    row[r] = v;
                }
                generated.labels.push_back(static_cast<int>(k));
            }
        }

        // Keep 10% / 10% / 20% per class, discard the rest.
        std::vector<std::size_t> train_idx, valid_idx, test_idx;
        const std::size_t n_train = std::max<std::size_t>(1, per_class / 10);
        const std::size_t n_valid = std::max<std::size_t>(1, per_class / 10);
        const std::size_t n_test = std::max<std::size_t>(1, per_class / 5);
        for (std::size_t k = 0; k < class_count; ++k) {
            const std::size_t base = k * per_class;
            for (std::size_t i = 0; i < n_train; ++i) train_idx.push_back(base + i);
            for (std::size_t i = 0; i < n_valid; ++i) valid_idx.push_back(base + n_train + i);
            for (std::size_t i = 0; i < n_test; ++i) {
                test_idx.push_back(base + n_train + n_valid + i);
            }
        }
        split.push_back(FederationData{gather(generated, train_idx),
                                       gather(generated, valid_idx),
                                       gather(generated, test_idx)});
    }
    return split;
}

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw input_error("cannot open " + path);

    Dataset data;
    std::vector<double> values;
    std::size_t width = 0;
    std::string line;
    std::size_t line_no = 0;
    int max_label = -1;

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_fields(line);
        if (data.labels.empty() && width == 0 && !fields.empty() && !looks_numeric(fields[0])) {
            continue;  // header row
        }
        if (fields.size() < 2) {
            throw parse_error("line " + std::to_string(line_no) + ": need features and a label");
        }
        if (width == 0) {
            width = fields.size() - 1;
        } else if (fields.size() - 1 != width) {
            throw parse_error("line " + std::to_string(line_no) + ": ragged row");
        }
        for (std::size_t i = 0; i < width; ++i) {
            if (!looks_numeric(fields[i])) {
                throw parse_error("line " + std::to_string(line_no) + ": non-numeric field '" +
                                  fields[i] + "'");
            }
            values.push_back(std::strtod(fields[i].c_str(), nullptr));
        }
        const std::string& label_field = fields[width];
        char* end = nullptr;
        const long label = std::strtol(label_field.c_str(), &end, 10);
        if (end == label_field.c_str() || label < 0) {
            throw parse_error("line " + std::to_string(line_no) + ": bad label '" + label_field +
                              "'");
        }
        data.labels.push_back(static_cast<int>(label));
        max_label = std::max(max_label, static_cast<int>(label));
    }
    if (data.labels.empty()) throw parse_error("no data rows in " + path);

    data.inputs = Matrix(data.labels.size(), width, std::move(values));
    data.class_count = max_label + 1;
    data.validate();
    return data;
}

void export_split(const FederatedSplit& split, const std::string& directory) {
    std::filesystem::create_directories(directory);
    for (std::size_t i = 0; i < split.size(); ++i) {
        const std::string base = directory + "/fed" + std::to_string(i);
        write_csv(split[i].train, base + "_train.csv");
        write_csv(split[i].valid, base + "_valid.csv");
        write_csv(split[i].test, base + "_test.csv");
    }
}

} // namespace metafed
