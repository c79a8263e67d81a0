#include "sparsecnn/protocols.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "sparsecnn/error.hpp"
#include "sparsecnn/memory_report.hpp"
#include "sparsecnn/regularizers.hpp"
#include "sparsecnn/rng.hpp"

namespace sparsecnn {

namespace {

std::string csv_number(double v) {
    return std::isnan(v) ? std::string{} : fmt::format("{}", v);
}

std::vector<std::size_t> plan_caps(const std::vector<std::string>& names, const SparsityPlan& plan) {
    std::vector<std::size_t> caps;
    for (const auto& name : names) caps.push_back(plan.caps.at(name));
    return caps;
}

CandidateRecord evaluate_candidate(const Network<float>& net, const std::vector<std::string>& names,
                                   const SparsityPlan& plan, const Dataset& val, const Dataset* test) {
    CandidateRecord rec;
    rec.caps = plan_caps(names, plan);
    for (const auto& name : names) rec.nnz.push_back(net.params(name).nonzero_count());
    for (auto c : rec.caps) rec.total_cap += c;
    for (auto z : rec.nnz) rec.total_nnz += z;
    rec.val_acc = accuracy(net, val);
    rec.test_acc = test ? accuracy(net, *test) : std::numeric_limits<double>::quiet_NaN();
    rec.memory_bytes = memory_report(net).totals.best_bytes;
    return rec;
}

}  // namespace

std::size_t SparsityPlan::total() const {
    std::size_t sum = 0;
    for (const auto& [name, cap] : caps) sum += cap;
    return sum;
}

void SparsityPlan::validate(const Network<float>& net) const {
    for (const auto* p : net.parameter_layers()) {
        auto it = caps.find(p->name);
        if (it == caps.end()) throw ConfigError("sparsity plan has no cap for layer " + p->name);
        if (it->second < 1 || it->second > p->parameter_count()) {
            throw ConfigError(fmt::format("cap {} for layer {} outside [1, {}]", it->second, p->name, p->parameter_count()));
        }
    }
    if (caps.size() != net.parameter_layers().size()) throw ConfigError("sparsity plan names layers missing from the network");
}

SparsityPlan dense_plan(const Network<float>& net) {
    SparsityPlan plan;
    plan.note = "dense";
    for (const auto* p : net.parameter_layers()) plan.caps[p->name] = p->parameter_count();
    return plan;
}

RegSpecs plan_reg_specs(const SparsityPlan& plan, long period) {
    RegSpecs specs;
    for (const auto& [name, cap] : plan.caps) {
        RegSpec spec = RegSpec::l0(cap, period);
        spec.apply_to_biases = true;
        specs[name] = spec;
    }
    return specs;
}

std::size_t reduced_cap(std::size_t t) {
    if (t <= 1) return 1;
    return std::min((4 * t + 4) / 5, t - 1);
}

void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = count;
            }
        }
    };
    std::vector<std::jthread> threads;
    for (std::size_t j = 0; j < std::min(jobs, count); ++j) threads.emplace_back(worker);
    threads.clear();
    if (failure) std::rethrow_exception(failure);
}

GreedyResult greedy_sparsify(const Network<float>& base, const Dataset& train_set, const Dataset& val,
                             std::size_t target_nnz, const GreedyConfig& cfg, const Dataset* test) {
    cfg.finetune.validate();
    const auto names = base.parameter_layer_names();
    if (target_nnz < names.size()) {
        throw ConfigError(fmt::format("target of {} nonzeros is below the minimum of one per layer ({})", target_nnz,
                                      names.size()));
    }
    GreedyResult result{base, dense_plan(base), names, {}};
    result.plan.note = "greedy round 0";
    {
        auto start = evaluate_candidate(base, names, result.plan, val, test);
        start.adopted = true;
        result.log.push_back(std::move(start));
    }

    for (int round = 1; result.plan.total() > target_nnz; ++round) {
        std::vector<std::size_t> layers;
        for (std::size_t l = 0; l < names.size(); ++l) {
            if (result.plan.caps.at(names[l]) > 1) layers.push_back(l);
        }
        std::vector<Network<float>> nets(layers.size(), result.net);
        std::vector<SparsityPlan> plans(layers.size(), result.plan);
        std::vector<CandidateRecord> records(layers.size());
        const auto round_seed = derive_seed(cfg.finetune.seed, "greedy", static_cast<std::uint64_t>(round));
        parallel_for(layers.size(), cfg.jobs, [&](std::size_t c) {
            auto& cap = plans[c].caps.at(names[layers[c]]);
            cap = reduced_cap(cap);
            plans[c].note = fmt::format("greedy round {}", round);
            TrainConfig tc = cfg.finetune;
            tc.seed = round_seed + c;
            train(nets[c], train_set, tc, plan_reg_specs(plans[c], cfg.period));
            records[c] = evaluate_candidate(nets[c], names, plans[c], val, test);
            records[c].round = round;
            records[c].layer_reduced = names[layers[c]];
        });

        std::size_t best = 0;
        for (std::size_t c = 1; c < layers.size(); ++c) {
            const auto& a = records[c];
            const auto& b = records[best];
            const auto cap_a = a.caps[layers[c]];
            const auto cap_b = b.caps[layers[best]];
            if (a.val_acc > b.val_acc || (a.val_acc == b.val_acc && cap_a > cap_b)) best = c;
        }
        records[best].adopted = true;
        result.net = std::move(nets[best]);
        result.plan = std::move(plans[best]);
        for (auto& r : records) result.log.push_back(std::move(r));
    }
    return result;
}

void write_candidate_log_csv(std::ostream& out, const std::vector<std::string>& layer_names,
                             std::span<const CandidateRecord> log) {
    out << "round,layer_reduced,adopted";
    for (const auto& n : layer_names) out << ",cap_" << n;
    for (const auto& n : layer_names) out << ",nnz_" << n;
    out << ",total_cap,total_nnz,val_acc,test_acc,memory_bytes\n";
    for (const auto& r : log) {
        out << r.round << ',' << r.layer_reduced << ',' << (r.adopted ? 1 : 0);
        for (auto c : r.caps) out << ',' << c;
        for (auto z : r.nnz) out << ',' << z;
        out << ',' << r.total_cap << ',' << r.total_nnz << ',' << csv_number(r.val_acc) << ','
            << csv_number(r.test_acc) << ',' << r.memory_bytes << '\n';
    }
}

std::vector<CandidateRecord> read_candidate_log_csv(std::istream& in, std::vector<std::string>& layer_names) {
    auto split_line = [](const std::string& line) {
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            const auto pos = line.find(',', start);
            cells.push_back(line.substr(start, pos - start));
            if (pos == std::string::npos) break;
            start = pos + 1;
        }
        return cells;
    };
    auto number = [](const std::string& cell, std::size_t line) {
        try {
            std::size_t used = 0;
            const double v = std::stod(cell, &used);
            if (used != cell.size()) throw std::invalid_argument(cell);
            return v;
        } catch (const std::exception&) {
            throw FormatError(fmt::format("candidate log line {}: bad number '{}'", line, cell));
        }
    };

    std::string line;
    if (!std::getline(in, line)) throw FormatError("candidate log is empty");
    const auto header = split_line(line);
    layer_names.clear();
    for (const auto& h : header) {
        if (h.starts_with("cap_")) layer_names.push_back(h.substr(4));
    }
    const std::size_t layers = layer_names.size();
    const std::size_t expected = 3 + 2 * layers + 5;
    if (layers == 0 || header.size() != expected || header[0] != "round") {
        throw FormatError("candidate log header not recognised");
    }
    std::vector<CandidateRecord> log;
    for (std::size_t line_no = 2; std::getline(in, line); ++line_no) {
        if (line.empty()) continue;
        const auto cells = split_line(line);
        if (cells.size() != expected) {
            throw FormatError(fmt::format("candidate log line {}: {} fields, expected {}", line_no, cells.size(), expected));
        }
        CandidateRecord r;
        r.round = static_cast<int>(number(cells[0], line_no));
        r.layer_reduced = cells[1];
        r.adopted = cells[2] == "1";
        for (std::size_t l = 0; l < layers; ++l) r.caps.push_back(static_cast<std::size_t>(number(cells[3 + l], line_no)));
        for (std::size_t l = 0; l < layers; ++l) {
            r.nnz.push_back(static_cast<std::size_t>(number(cells[3 + layers + l], line_no)));
        }
        std::size_t k = 3 + 2 * layers;
        r.total_cap = static_cast<std::size_t>(number(cells[k++], line_no));
        r.total_nnz = static_cast<std::size_t>(number(cells[k++], line_no));
        r.val_acc = number(cells[k++], line_no);
        r.test_acc = cells[k].empty() ? std::numeric_limits<double>::quiet_NaN() : number(cells[k], line_no);
        ++k;
        r.memory_bytes = static_cast<std::uint64_t>(number(cells[k], line_no));
        log.push_back(std::move(r));
    }
    return log;
}

const CandidateRecord& select_plan(std::span<const CandidateRecord> log, std::size_t cap) {
    const CandidateRecord* best = nullptr;
    for (const auto& r : log) {
        if (r.total_cap <= cap && (!best || r.val_acc > best->val_acc)) best = &r;
    }
    if (!best) throw ConfigError(fmt::format("no logged plan has at most {} nonzeros", cap));
    return *best;
}

SparsityPlan plan_from_record(const std::vector<std::string>& layer_names, const CandidateRecord& record) {
    if (record.caps.size() != layer_names.size()) throw ConfigError("candidate record does not match layer list");
    SparsityPlan plan;
    plan.note = fmt::format("greedy round {}", record.round);
    for (std::size_t l = 0; l < layer_names.size(); ++l) plan.caps[layer_names[l]] = record.caps[l];
    return plan;
}

std::vector<ThresholdRow> threshold_compare(const Network<float>& dense_net, std::span<const double> deltas,
                                            const Dataset& train_set, const Dataset& test, const ThresholdConfig& cfg) {
    if (deltas.empty()) throw ConfigError("threshold_compare needs at least one delta");
    cfg.retrain.validate();
    const double dense_acc = accuracy(dense_net, test);
    const std::size_t dense_nnz = dense_net.nonzero_count();
    std::vector<ThresholdRow> rows(deltas.size());
    parallel_for(deltas.size(), cfg.jobs, [&](std::size_t i) {
        ThresholdRow& row = rows[i];
        row.delta = deltas[i];
        Network<float> cut = dense_net;
        SparsityPlan plan;
        plan.note = fmt::format("matched-to-threshold delta={}", deltas[i]);
        for (auto* p : cut.parameter_layers()) {
            threshold_in_place(p->weights.values(), static_cast<float>(deltas[i]));
            threshold_in_place(p->biases.values(), static_cast<float>(deltas[i]));
            const auto z = p->nonzero_count();
            row.layer_nnz.push_back(z);
            row.nnz += z;
            plan.caps[p->name] = std::max<std::size_t>(z, 1);
        }
        row.acc_threshold = accuracy(cut, test);
        if (row.nnz == dense_nnz) {
            row.acc_retrained = dense_acc;
            row.retrained_nnz = dense_nnz;
            return;
        }
        Network<float> retrained = dense_net;
        TrainConfig tc = cfg.retrain;
        tc.seed = derive_seed(cfg.retrain.seed, "threshold", i);
        train(retrained, train_set, tc, plan_reg_specs(plan, cfg.period));
        row.acc_retrained = accuracy(retrained, test);
        row.retrained_nnz = retrained.nonzero_count();
    });
    return rows;
}

void write_threshold_csv(std::ostream& out, const std::vector<std::string>& layer_names,
                         std::span<const ThresholdRow> rows) {
    out << "delta,nnz,acc_threshold,acc_retrained,retrained_nnz";
    for (const auto& n : layer_names) out << ",nnz_" << n;
    out << '\n';
    for (const auto& r : rows) {
        out << csv_number(r.delta) << ',' << r.nnz << ',' << csv_number(r.acc_threshold) << ','
            << csv_number(r.acc_retrained) << ',' << r.retrained_nnz;
        for (auto z : r.layer_nnz) out << ',' << z;
        out << '\n';
    }
}

std::size_t EnsembleModel::total_nnz() const {
    std::size_t sum = 0;
    for (const auto& m : members) sum += m.nonzero_count();
    return sum;
}

EnsembleModel train_ensemble(std::size_t n, std::size_t budget, const std::vector<std::string>& layer_names,
                             std::span<const CandidateRecord> plan_log, const Network<float>& prototype,
                             const Dataset& data, const EnsembleConfig& cfg) {
    if (n < 1) throw ConfigError("ensemble needs at least one member");
    cfg.train.validate();
    const SparsityPlan plan = plan_from_record(layer_names, select_plan(plan_log, budget / n));
    plan.validate(prototype);

    EnsembleModel model;
    model.budget = budget;
    model.members.assign(n, prototype);
    model.plans.assign(n, plan);
    parallel_for(n, cfg.jobs, [&](std::size_t i) {
        auto& net = model.members[i];
        net.initialize(derive_seed(cfg.train.seed, "ensemble/init", i));
        TrainConfig tc = cfg.train;
        tc.seed = cfg.train.seed + i;
        const RegSpecs specs = plan_reg_specs(plan, cfg.period);
        if (n == 1) {
            train(net, data, tc, specs);
        } else {
            train(net, bag_resample(data, derive_seed(cfg.train.seed, "bag", i)), tc, specs);
        }
    });
    if (model.total_nnz() > budget) {
        throw Error(fmt::format("ensemble holds {} nonzeros, over the budget of {}", model.total_nnz(), budget));
    }
    return model;
}

Tensor<float> ensemble_probabilities(const EnsembleModel& model, const Tensor<float>& images) {
    if (model.members.empty()) throw ConfigError("empty ensemble");
    Tensor<float> sum = predict_probabilities(model.members.front(), images);
    for (std::size_t m = 1; m < model.members.size(); ++m) {
        const auto p = predict_probabilities(model.members[m], images);
        if (p.shape() != sum.shape()) throw ShapeError("ensemble members disagree on output shape");
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += p[i];
    }
    const float inv = 1.0f / static_cast<float>(model.members.size());
    for (auto& v : sum.values()) v *= inv;
    return sum;
}

std::vector<int> ensemble_predict(const EnsembleModel& model, const Tensor<float>& images) {
    return argmax_rows(ensemble_probabilities(model, images));
}

double ensemble_accuracy(const EnsembleModel& model, const Dataset& data) {
    const auto predicted = ensemble_predict(model, data.images);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == data.labels[i];
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<SweepRow> data_starvation_sweep(std::span<const double> fractions, const Network<float>& prototype,
                                            const Dataset& train_set, const Dataset& test, const SweepConfig& cfg) {
    for (double f : fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError(fmt::format("fraction {} outside (0, 1]", f));
    }
    std::vector<SweepRow> rows(2 * fractions.size());
    parallel_for(rows.size(), cfg.jobs, [&](std::size_t task) {
        const std::size_t i = task / 2;
        const bool sparse = task % 2 == 1;
        const Dataset subset = subsample(train_set, fractions[i], derive_seed(cfg.seed, "subsample", i));
        Network<float> net = prototype;
        train(net, subset, sparse ? cfg.sparse_train : cfg.dense_train, sparse ? cfg.sparse_specs : cfg.dense_specs);
        rows[task] = SweepRow{fractions[i], sparse ? "sparse" : "dense", subset.size(), accuracy(net, subset),
                              accuracy(net, test), net.nonzero_count()};
    });
    return rows;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
    out << "fraction,regime,train_size,train_acc,test_acc,nnz\n";
    for (const auto& r : rows) {
        out << csv_number(r.fraction) << ',' << r.regime << ',' << r.train_size << ',' << csv_number(r.train_acc) << ','
            << csv_number(r.test_acc) << ',' << r.nnz << '\n';
    }
}

}  // namespace sparsecnn
