#include "metafed/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "metafed/errors.hpp"
#include "metafed/losses.hpp"
#include "metafed/serialize.hpp"

namespace metafed {

std::string mode_name(Mode mode) {
    switch (mode) {
        case Mode::metafed: return "metafed";
        case Mode::metafed_pp: return "metafed_pp";
        case Mode::fedavg: return "fedavg";
        case Mode::fedprox: return "fedprox";
        case Mode::fedbn: return "fedbn";
        case Mode::local: return "local";
        case Mode::finetune_ablation: return "finetune_ablation";
        case Mode::no_stage1: return "no_stage1";
        case Mode::no_stage2: return "no_stage2";
    }
    throw config_error("unknown mode");
}

Mode mode_from_name(const std::string& name) {
    static const std::pair<const char*, Mode> table[] = {
        {"metafed", Mode::metafed},
        {"metafed_pp", Mode::metafed_pp},
        {"fedavg", Mode::fedavg},
        {"fedprox", Mode::fedprox},
        {"fedbn", Mode::fedbn},
        {"local", Mode::local},
        {"finetune_ablation", Mode::finetune_ablation},
        {"no_stage1", Mode::no_stage1},
        {"no_stage2", Mode::no_stage2},
    };
    for (const auto& [key, mode] : table) {
        if (name == key) return mode;
    }
    throw config_error("unknown mode '" + name + "'");
}

void HyperParams::validate() const {
    if (!(lambda0 >= 0.0)) throw config_error("lambda0 must be non-negative");
    if (rounds_stage1 < 1) throw config_error("rounds_stage1 must be at least 1");
    if (local_iters < 1) throw config_error("local_iters must be at least 1");
    if (!(lr > 0.0)) throw config_error("lr must be positive");
    if (batch_size < 1) throw config_error("batch_size must be at least 1");
    if (!(prox_mu >= 0.0)) throw config_error("prox_mu must be non-negative");
    if (order_kind == OrderKind::explicit_list && explicit_order.empty()) {
        throw config_error("explicit order requested but none given");
    }
}

BatchSampler::BatchSampler(std::uint64_t seed, std::size_t batch_size)
    : rng_(seed), batch_size_(batch_size) {
    if (batch_size < 1) throw config_error("batch_size must be at least 1");
}

Batch BatchSampler::next(const Dataset& train) {
    const std::size_t n = train.size();
    if (n == 0) throw input_error("cannot sample from an empty training set");
    if (order_.size() != n) {
        order_.resize(n);
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        rng_.shuffle(order_);
        pos_ = 0;
    }
    const std::size_t take = std::min(batch_size_, n);
    if (pos_ + take > n) {
        rng_.shuffle(order_);
        pos_ = 0;
    }
    std::vector<std::size_t> indices(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                     order_.begin() + static_cast<std::ptrdiff_t>(pos_ + take));
    pos_ += take;
    return train.subset(indices).as_batch();
}

double evaluate(const ModelParams& model, const Dataset& data) {
    if (data.size() == 0) throw input_error("cannot evaluate on an empty dataset");
    return accuracy(model, data.as_batch());
}

std::vector<std::size_t> resolve_order(const HyperParams& hp,
                                       const std::vector<std::size_t>& ids) {
    switch (hp.order_kind) {
        case OrderKind::index:
            return ids;
        case OrderKind::seeded_random: {
            std::vector<std::size_t> order = ids;
            Rng rng(mix_seed(hp.order_seed, 0x6f726472 /* "ordr" */));
            rng.shuffle(order);
            return order;
        }
        case OrderKind::explicit_list: {
            std::vector<std::size_t> order;
            for (std::size_t id : hp.explicit_order) {
                if (std::find(ids.begin(), ids.end(), id) != ids.end()) order.push_back(id);
            }
            std::vector<std::size_t> check = order;
            std::sort(check.begin(), check.end());
            std::vector<std::size_t> want = ids;
            std::sort(want.begin(), want.end());
            if (check != want) {
                throw config_error("explicit order must list every federation exactly once");
            }
            return order;
        }
    }
    throw config_error("unknown order kind");
}

namespace {

std::vector<std::vector<std::size_t>> kmeans_groups(
    const std::vector<std::vector<double>>& features, std::size_t k, std::uint64_t seed) {
    const std::size_t n = features.size();
    if (k < 1 || k > n) throw config_error("group count must be in [1, federation count]");

    Rng rng(mix_seed(seed, 0x67727570 /* "grup" */));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    std::vector<std::vector<double>> centers;
    for (std::size_t c = 0; c < k; ++c) centers.push_back(features[perm[c]]);

    const auto sq_dist = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = a[i] - b[i];
            s += d * d;
        }
        return s;
    };

    std::vector<std::size_t> assign(n, 0);
    for (int iter = 0; iter < 100; ++iter) {
        std::vector<std::size_t> next(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double d = sq_dist(features[i], centers[c]);
                if (d < best) {
                    best = d;
                    next[i] = c;
                }
            }
        }

        // Re-seed any emptied cluster with the point farthest from its
        // current center, taken from a cluster that can spare one.
        std::vector<std::size_t> sizes(k, 0);
        for (std::size_t c : next) ++sizes[c];
        for (std::size_t c = 0; c < k; ++c) {
            if (sizes[c] > 0) continue;
            double worst = -1.0;
            std::size_t pick = n;
            for (std::size_t i = 0; i < n; ++i) {
                if (sizes[next[i]] < 2) continue;
                const double d = sq_dist(features[i], centers[next[i]]);
                if (d > worst) {
                    worst = d;
                    pick = i;
                }
            }
            if (pick == n) throw config_error("cannot populate every group");
            --sizes[next[pick]];
            next[pick] = c;
            ++sizes[c];
        }

        const bool stable = next == assign && iter > 0;
        assign = next;
        if (stable) break;

        for (std::size_t c = 0; c < k; ++c) {
            std::vector<double> mean(features[0].size(), 0.0);
            std::size_t count = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (assign[i] != c) continue;
                for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += features[i][j];
                ++count;
            }
            for (double& v : mean) v /= static_cast<double>(count);
            centers[c] = std::move(mean);
        }
    }

    std::vector<std::vector<std::size_t>> groups(k);
    for (std::size_t i = 0; i < n; ++i) groups[assign[i]].push_back(i);
    for (auto& g : groups) std::sort(g.begin(), g.end());
    std::sort(groups.begin(), groups.end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });
    return groups;
}

std::vector<double> feature_stats(const Matrix& inputs) {
    const std::size_t n = inputs.rows(), d = inputs.cols();
    std::vector<double> stats(2 * d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = inputs.row(i);
        for (std::size_t j = 0; j < d; ++j) stats[j] += r[j];
    }
    for (std::size_t j = 0; j < d; ++j) stats[j] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = inputs.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double dev = r[j] - stats[j];
            stats[d + j] += dev * dev;
        }
    }
    for (std::size_t j = 0; j < d; ++j) stats[d + j] /= static_cast<double>(n);
    return stats;
}

void check_grouping(const std::vector<std::vector<std::size_t>>& groups, std::size_t n) {
    std::vector<bool> seen(n, false);
    for (const auto& group : groups) {
        if (group.empty()) throw config_error("empty group");
        for (std::size_t id : group) {
            if (id >= n || seen[id]) {
                throw config_error("groups must partition the federations");
            }
            seen[id] = true;
        }
    }
    for (bool s : seen) {
        if (!s) throw config_error("groups must cover every federation");
    }
}

// Runs `iters` minibatch steps on the federation, recomputing teacher
// features per batch, and returns the per-iteration mean loss parts.
LossParts train_block(Federation& fed, const HyperParams& hp, double lambda,
                      const ModelParams* teacher, const ModelParams* prox_ref,
                      std::size_t iters) {
    LossSpec spec;
    spec.lambda = lambda;
    spec.tap = hp.tap;
    if (prox_ref != nullptr) {
        spec.proximal_mu = hp.prox_mu;
        spec.reference = prox_ref;
    }
    if (lambda > 0.0 && teacher == nullptr) {
        throw protocol_error("distillation requested without a teacher");
    }
    LossParts mean;
    for (std::size_t it = 0; it < iters; ++it) {
        const Batch batch = fed.sampler.next(fed.data.train);
        if (lambda > 0.0) {
            spec.teacher_features = teacher_features(*teacher, batch.inputs, hp.tap);
        }
        const LossParts parts = train_step(fed.model, batch, spec, hp.lr);
        mean.cls += parts.cls;
        mean.dist += parts.dist;
        mean.prox += parts.prox;
        mean.total += parts.total;
    }
    const double inv = 1.0 / static_cast<double>(iters);
    mean.cls *= inv;
    mean.dist *= inv;
    mean.prox *= inv;
    mean.total *= inv;
    return mean;
}

void require_valid_set(const Federation& fed) {
    if (fed.data.valid.size() == 0) {
        throw protocol_error("federation " + std::to_string(fed.id) + " has no valid set");
    }
}

void pretrain_all(std::vector<Federation>& feds, const std::vector<std::size_t>& order,
                  const HyperParams& hp, RunTrace& trace) {
    for (std::size_t pos : order) {
        Federation& fed = feds[pos];
        require_valid_set(fed);
        const LossParts parts = train_block(fed, hp, 0.0, nullptr, nullptr, hp.local_iters);
        fed.last_valid_acc = evaluate(fed.model, fed.data.valid);

        TraceRow row;
        row.round = 0;
        row.federation = static_cast<int>(fed.id);
        row.stage = Stage::pretrain;
        row.branch = Branch::local;
        row.loss_cls = parts.cls;
        row.loss_dist = parts.dist;
        row.valid_acc = fed.last_valid_acc;
        row.test_acc = evaluate(fed.model, fed.data.test);
        row.acc_local = fed.last_valid_acc;
        trace.rows.push_back(row);
    }
}

// Cyclic pass shared by Stage I and the cross-group exchange; only the row
// label differs.
void cyclic_round(std::vector<Federation>& feds, const std::vector<std::size_t>& order,
                  const HyperParams& hp, int round_no, RunTrace& trace, bool force_lambda_zero,
                  Stage stage_label) {
    const std::size_t n = order.size();
    if (n <= 1) return;
    for (std::size_t p = 0; p < n; ++p) {
        Federation& receiver = feds[order[p]];
        const Federation& sender = feds[order[(p + n - 1) % n]];
        require_valid_set(receiver);

        const double acc = evaluate(receiver.model, receiver.data.valid);
        const std::size_t payload = payload_bytes(sender.model);
        const bool keep = acc > hp.l_t1;
        if (!keep) {
            copy_model(sender.model, receiver.model, /*preserve_local_norm=*/!hp.share_norm);
        }
        const double lambda = force_lambda_zero ? 0.0 : hp.lambda0;
        const LossParts parts =
            train_block(receiver, hp, lambda, &sender.model, nullptr, hp.local_iters);
        receiver.last_valid_acc = evaluate(receiver.model, receiver.data.valid);

        TraceRow row;
        row.round = round_no;
        row.federation = static_cast<int>(receiver.id);
        row.stage = stage_label;
        row.branch = keep ? Branch::distill : Branch::copy;
        row.lambda = lambda;
        row.loss_cls = parts.cls;
        row.loss_dist = parts.dist;
        row.valid_acc = acc;
        row.test_acc = evaluate(receiver.model, receiver.data.test);
        row.bytes_sent = payload;
        row.bytes_received = payload;
        row.acc_local = acc;
        trace.rows.push_back(row);
    }
}

} // namespace

ModelParams aggregate_models(const std::vector<Federation>& feds, Mode variant,
                             const ModelParams& previous_global) {
    double total = 0.0;
    for (const auto& fed : feds) total += static_cast<double>(fed.data.train.size());
    if (!(total > 0.0)) throw protocol_error("no training data to aggregate");

    ModelParams global = previous_global;
    for (std::size_t k = 0; k < global.layers.size(); ++k) {
        auto& weights = global.layers[k].weights.data();
        auto& bias = global.layers[k].bias;
        std::fill(weights.begin(), weights.end(), 0.0);
        std::fill(bias.begin(), bias.end(), 0.0);
        for (const auto& fed : feds) {
            const double w = static_cast<double>(fed.data.train.size()) / total;
            const auto& src = fed.model.layers[k];
            for (std::size_t i = 0; i < weights.size(); ++i) {
                weights[i] += w * src.weights.data()[i];
            }
            for (std::size_t i = 0; i < bias.size(); ++i) bias[i] += w * src.bias[i];
        }
        if (variant == Mode::fedbn || !global.norm_layers[k].has_value()) continue;
        auto& norm = *global.norm_layers[k];
        const std::size_t c = norm.scale.size();
        std::vector<double*> fields = {norm.running_mean.data(), norm.running_var.data(),
                                       norm.scale.data(), norm.shift.data()};
        for (double* field : fields) std::fill(field, field + c, 0.0);
        for (const auto& fed : feds) {
            const double w = static_cast<double>(fed.data.train.size()) / total;
            const auto& src = *fed.model.norm_layers[k];
            const std::vector<const double*> srcs = {src.running_mean.data(),
                                                     src.running_var.data(), src.scale.data(),
                                                     src.shift.data()};
            for (std::size_t f = 0; f < fields.size(); ++f) {
                for (std::size_t i = 0; i < c; ++i) fields[f][i] += w * srcs[f][i];
            }
        }
    }
    return global;
}

std::vector<std::vector<std::size_t>> group_by_feature_stats(const FederatedSplit& split,
                                                             std::size_t group_count,
                                                             std::uint64_t seed) {
    std::vector<std::vector<double>> features;
    for (const auto& fed : split) features.push_back(feature_stats(fed.train.inputs));
    return kmeans_groups(features, group_count, seed);
}

std::vector<Federation> make_federations(const FederatedSplit& split, const ModelParams& init,
                                         const HyperParams& hp, std::uint64_t seed) {
    if (split.empty()) throw config_error("need at least one federation");
    init.validate();
    hp.validate();
    std::vector<Federation> feds;
    feds.reserve(split.size());
    for (std::size_t i = 0; i < split.size(); ++i) {
        if (split[i].train.size() == 0) {
            throw input_error("federation " + std::to_string(i) + " has no training data");
        }
        Federation fed;
        fed.id = i;
        fed.data = split[i];
        fed.model = init;
        fed.sampler = BatchSampler(mix_seed(seed, 0xba7c0000 + i), hp.batch_size);
        feds.push_back(std::move(fed));
    }
    return feds;
}

void stage1_round(std::vector<Federation>& feds, const std::vector<std::size_t>& order,
                  const HyperParams& hp, int round_no, RunTrace& trace,
                  bool force_lambda_zero) {
    cyclic_round(feds, order, hp, round_no, trace, force_lambda_zero, Stage::stage1);
}

ModelParams run_stage1(std::vector<Federation>& feds, const std::vector<std::size_t>& order,
                       const HyperParams& hp, RunTrace& trace, bool force_lambda_zero,
                       int* rounds_run) {
    if (order.empty()) throw config_error("empty federation order");
    pretrain_all(feds, order, hp, trace);

    double prev_mean = -1.0;
    int stall = 0;
    int rounds = 0;
    for (std::size_t r = 1; r <= hp.rounds_stage1; ++r) {
        stage1_round(feds, order, hp, static_cast<int>(r), trace, force_lambda_zero);
        rounds = static_cast<int>(r);
        if (!hp.early_stop) continue;
        double mean = 0.0;
        for (std::size_t pos : order) mean += feds[pos].last_valid_acc;
        mean /= static_cast<double>(order.size());
        stall = (mean - prev_mean < kEarlyStopDelta) ? stall + 1 : 0;
        prev_mean = mean;
        if (stall >= kEarlyStopPatience) break;
    }
    if (rounds_run != nullptr) *rounds_run = rounds;
    return feds[order.back()].model;
}

void run_stage2(std::vector<Federation>& feds, const std::vector<std::size_t>& order,
                const ModelParams& common, const HyperParams& hp, int round_no, RunTrace& trace,
                bool force_lambda_zero) {
    for (std::size_t pos : order) {
        Federation& fed = feds[pos];
        require_valid_set(fed);

        const double acc_common = evaluate(common, fed.data.valid);
        const double acc_local = evaluate(fed.model, fed.data.valid);
        const std::size_t payload = payload_bytes(common);

        const bool shut_off = acc_common <= acc_local && acc_common < hp.l_t2;
        double lambda = 0.0;
        if (!force_lambda_zero && !shut_off && hp.lambda0 > 0.0) {
            lambda = lambda_schedule(hp.lambda0, acc_common, acc_local);
        }
        const Branch branch = (force_lambda_zero || shut_off) ? Branch::zero : Branch::adapt;

        LossSpec spec;
        spec.lambda = lambda;
        spec.tap = hp.tap;

        ModelParams best_model = fed.model;
        double best_acc = acc_local;
        LossParts mean;
        for (std::size_t it = 0; it < hp.local_iters; ++it) {
            const Batch batch = fed.sampler.next(fed.data.train);
            if (lambda > 0.0) {
                spec.teacher_features = teacher_features(common, batch.inputs, hp.tap);
            }
            const LossParts parts = train_step(fed.model, batch, spec, hp.lr);
            mean.cls += parts.cls;
            mean.dist += parts.dist;
            mean.prox += parts.prox;
            mean.total += parts.total;
            const double v = evaluate(fed.model, fed.data.valid);
            if (v > best_acc) {
                best_acc = v;
                best_model = fed.model;
            }
        }
        const double inv = 1.0 / static_cast<double>(hp.local_iters);
        mean.cls *= inv;
        mean.dist *= inv;
        mean.prox *= inv;
        mean.total *= inv;

        fed.model = std::move(best_model);
        fed.last_valid_acc = best_acc;

        TraceRow row;
        row.round = round_no;
        row.federation = static_cast<int>(fed.id);
        row.stage = Stage::stage2;
        row.branch = branch;
        row.lambda = lambda;
        row.loss_cls = mean.cls;
        row.loss_dist = mean.dist;
        row.valid_acc = acc_local;
        row.test_acc = evaluate(fed.model, fed.data.test);
        row.bytes_sent = payload;
        row.bytes_received = payload;
        row.acc_common = acc_common;
        row.acc_local = acc_local;
        trace.rows.push_back(row);
    }
}

ModelParams run_fedavg(std::vector<Federation>& feds, const HyperParams& hp, Mode variant,
                       const ModelParams& init, RunTrace& trace) {
    if (variant != Mode::fedavg && variant != Mode::fedprox && variant != Mode::fedbn) {
        throw config_error("run_fedavg only handles fedavg, fedprox, fedbn");
    }
    const bool keep_norm_local = variant == Mode::fedbn;
    ModelParams global = init;

    for (std::size_t r = 1; r <= hp.rounds_stage1; ++r) {
        std::vector<TraceRow> round_rows;
        for (auto& fed : feds) {
            require_valid_set(fed);
            copy_model(global, fed.model, keep_norm_local);
            const ModelParams received = fed.model;
            const ModelParams* prox_ref = variant == Mode::fedprox ? &received : nullptr;
            const LossParts parts =
                train_block(fed, hp, 0.0, nullptr, prox_ref, hp.local_iters);
            fed.last_valid_acc = evaluate(fed.model, fed.data.valid);

            const std::size_t payload = payload_bytes(fed.model, !keep_norm_local);
            TraceRow row;
            row.round = static_cast<int>(r);
            row.federation = static_cast<int>(fed.id);
            row.stage = Stage::round;
            row.branch = Branch::train;
            row.loss_cls = parts.cls;
            row.loss_dist = parts.dist;
            row.valid_acc = fed.last_valid_acc;
            row.bytes_sent = 2 * payload;
            row.bytes_received = payload;
            round_rows.push_back(row);
        }
        global = aggregate_models(feds, variant, global);
        for (std::size_t i = 0; i < feds.size(); ++i) {
            ModelParams probe = feds[i].model;
            copy_model(global, probe, keep_norm_local);
            round_rows[i].test_acc = evaluate(probe, feds[i].data.test);
            trace.rows.push_back(round_rows[i]);
        }
    }

    for (auto& fed : feds) copy_model(global, fed.model, keep_norm_local);
    return global;
}

void run_metafed_pp(std::vector<Federation>& feds, const HyperParams& hp, RunTrace& trace,
                    std::uint64_t seed, std::optional<ModelParams>& common_out) {
    const std::size_t n = feds.size();
    std::vector<std::vector<std::size_t>> groups = hp.groups;
    if (groups.empty()) {
        std::vector<std::vector<double>> features;
        for (const auto& fed : feds) features.push_back(feature_stats(fed.data.train.inputs));
        groups = kmeans_groups(features, hp.group_count == 0 ? 1 : hp.group_count, seed);
    }
    check_grouping(groups, n);

    std::vector<std::vector<std::size_t>> orders;
    std::vector<std::size_t> reps;
    for (const auto& group : groups) {
        orders.push_back(resolve_order(hp, group));
        run_stage1(feds, orders.back(), hp, trace, false);
        reps.push_back(orders.back().back());
    }

    int next_round = static_cast<int>(hp.rounds_stage1) + 1;
    if (groups.size() > 1) {
        cyclic_round(feds, reps, hp, next_round, trace, false, Stage::inter);
        ++next_round;
    }

    std::vector<ModelParams> commons;
    for (std::size_t rep : reps) commons.push_back(feds[rep].model);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        run_stage2(feds, orders[g], commons[g], hp, next_round, trace, false);
    }
    common_out = std::move(commons.back());
}

namespace {

void run_local_only(std::vector<Federation>& feds, const HyperParams& hp, RunTrace& trace) {
    const std::size_t blocks = hp.rounds_stage1 + 2;
    for (std::size_t r = 1; r <= blocks; ++r) {
        for (auto& fed : feds) {
            require_valid_set(fed);
            const LossParts parts =
                train_block(fed, hp, 0.0, nullptr, nullptr, hp.local_iters);
            fed.last_valid_acc = evaluate(fed.model, fed.data.valid);

            TraceRow row;
            row.round = static_cast<int>(r);
            row.federation = static_cast<int>(fed.id);
            row.stage = Stage::local;
            row.branch = Branch::local;
            row.loss_cls = parts.cls;
            row.loss_dist = parts.dist;
            row.valid_acc = fed.last_valid_acc;
            row.test_acc = evaluate(fed.model, fed.data.test);
            row.acc_local = fed.last_valid_acc;
            trace.rows.push_back(row);
        }
    }
}

} // namespace

RunResult run_protocol(const FederatedSplit& split, const ModelParams& init,
                       const HyperParams& hp, std::uint64_t seed) {
    std::vector<Federation> feds = make_federations(split, init, hp, seed);
    std::vector<std::size_t> ids(feds.size());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    const std::vector<std::size_t> order = resolve_order(hp, ids);

    RunResult result;
    switch (hp.mode) {
        case Mode::metafed:
        case Mode::finetune_ablation:
        case Mode::no_stage2: {
            const bool force_zero = hp.mode == Mode::finetune_ablation;
            int rounds = 0;
            ModelParams common =
                run_stage1(feds, order, hp, result.trace, force_zero, &rounds);
            if (hp.mode != Mode::no_stage2) {
                run_stage2(feds, order, common, hp, rounds + 1, result.trace, force_zero);
            }
            result.common = std::move(common);
            break;
        }
        case Mode::no_stage1: {
            pretrain_all(feds, order, hp, result.trace);
            double best = -1.0;
            std::size_t best_fed = 0;
            for (std::size_t j = 0; j < feds.size(); ++j) {
                double mean = 0.0;
                for (const auto& fed : feds) {
                    mean += evaluate(feds[j].model, fed.data.valid);
                }
                mean /= static_cast<double>(feds.size());
                if (mean > best) {
                    best = mean;
                    best_fed = j;
                }
            }
            ModelParams common = feds[best_fed].model;
            run_stage2(feds, order, common, hp, 1, result.trace, false);
            result.common = std::move(common);
            break;
        }
        case Mode::metafed_pp:
            run_metafed_pp(feds, hp, result.trace, seed, result.common);
            break;
        case Mode::fedavg:
        case Mode::fedprox:
        case Mode::fedbn:
            result.common = run_fedavg(feds, hp, hp.mode, init, result.trace);
            break;
        case Mode::local:
            run_local_only(feds, hp, result.trace);
            break;
    }

    for (const auto& fed : feds) {
        result.models.push_back(fed.model);
        result.final_test_acc.push_back(evaluate(fed.model, fed.data.test));
    }
    return result;
}

} // namespace metafed
