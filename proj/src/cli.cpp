#include "sparsecnn/cli.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "sparsecnn/checkpoint.hpp"
#include "sparsecnn/error.hpp"
#include "sparsecnn/memory_report.hpp"
#include "sparsecnn/network.hpp"
#include "sparsecnn/optimizer.hpp"
#include "sparsecnn/protocols.hpp"
#include "sparsecnn/rng.hpp"

#ifndef SPARSECNN_VERSION
#define SPARSECNN_VERSION "0.0.0+unknown"
#endif

namespace sparsecnn {

namespace fs = std::filesystem;

namespace {

template <typename Fn>
void write_file(const fs::path& path, Fn&& fn) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    fn(out);
    if (!out) throw IoError("write failed for " + path.string());
}

fs::path find_cifar_dir(const fs::path& dir) {
    if (fs::exists(dir / "data_batch_1.bin")) return dir;
    if (fs::exists(dir / "cifar-10-batches-bin" / "data_batch_1.bin")) return dir / "cifar-10-batches-bin";
    throw IoError(fmt::format("no CIFAR-10 binary batches (data_batch_1.bin) under {}", dir.string()));
}

struct DenseRun {
    Network<float> net;
    Metrics metrics;
};

DenseRun train_from_scratch(const RunConfig& cfg, const Dataset& train_set, const Dataset* test_set) {
    auto net = build_topology<float>(cfg.topology, cfg.train.seed);
    const auto specs = cfg.resolve_specs(net.parameter_layer_names());
    auto metrics = train(net, train_set, cfg.train, specs, test_set);
    return {std::move(net), std::move(metrics)};
}

Network<float> starting_network(const RunConfig& cfg, const Dataset& train_set, const Dataset* test_set,
                                const fs::path& out_dir) {
    if (!cfg.checkpoint.empty()) {
        auto net = load_checkpoint(cfg.checkpoint);
        if (net.topology() != cfg.topology) {
            throw ConfigError(fmt::format("checkpoint holds {} but config names {}", net.topology(), cfg.topology));
        }
        return net;
    }
    auto run = train_from_scratch(cfg, train_set, test_set);
    save_checkpoint(run.net, out_dir / "dense.ckpt", cfg.checkpoint_encoding);
    write_file(out_dir / "dense_metrics.csv", [&](std::ostream& o) { write_metrics_csv(o, run.metrics); });
    return std::move(run.net);
}

std::size_t greedy_target(const RunConfig& cfg, std::size_t dense_count) {
    if (cfg.target_nnz > 0) return cfg.target_nnz;
    return static_cast<std::size_t>(std::ceil(cfg.target_ratio * static_cast<double>(dense_count)));
}

GreedyResult run_greedy(const RunConfig& cfg, const Dataset& train_full, const Dataset& test, const fs::path& out_dir) {
    const auto [train_set, val] = split_validation(train_full, cfg.val_fraction, derive_seed(cfg.train.seed, "validation"));
    const auto base = starting_network(cfg, train_set, &test, out_dir);
    GreedyConfig gc;
    gc.finetune = cfg.train;
    gc.finetune.max_iterations = cfg.finetune_iterations;
    gc.period = cfg.l0_period;
    gc.jobs = cfg.jobs;
    auto result = greedy_sparsify(base, train_set, val, greedy_target(cfg, base.parameter_count()), gc, &test);
    write_file(out_dir / "candidate_log.csv",
               [&](std::ostream& o) { write_candidate_log_csv(o, result.layer_names, result.log); });
    return result;
}

void write_plan(const fs::path& path, const SparsityPlan& plan) {
    write_file(path, [&](std::ostream& o) {
        fmt::print(o, "# {}\n", plan.note);
        for (const auto& [name, cap] : plan.caps) fmt::print(o, "{} = {}\n", name, cap);
    });
}

void cmd_train(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
    const auto [train_set, test] = load_datasets(cfg);
    auto run = train_from_scratch(cfg, train_set, &test);
    save_checkpoint(run.net, out_dir / "model.ckpt", cfg.checkpoint_encoding);
    write_file(out_dir / "metrics.csv", [&](std::ostream& o) { write_metrics_csv(o, run.metrics); });
    write_file(out_dir / "memory_report.csv",
               [&](std::ostream& o) { write_report_csv(o, memory_report(run.net, cfg.value_bytes), cfg.units); });
    fmt::print(out, "test_accuracy={}\n", run.metrics.rows.back().test_acc);
}

void cmd_eval(const RunConfig& cfg, std::ostream& out) {
    const auto net = load_checkpoint(cfg.checkpoint);
    const auto [train_set, test] = load_datasets(cfg);
    fmt::print(out, "test_accuracy={}\n", accuracy(net, test));
}

void cmd_memory_report(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
    const MemoryReport report = cfg.checkpoint.empty()
                                    ? memory_report(build_topology<float>(cfg.topology, cfg.train.seed), cfg.value_bytes)
                                    : memory_report(read_checkpoint(cfg.checkpoint), cfg.value_bytes);
    write_file(out_dir / "memory_report.csv", [&](std::ostream& o) { write_report_csv(o, report, cfg.units); });
    out << format_report_table(report, cfg.units);
}

void cmd_greedy(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
    const auto [train_full, test] = load_datasets(cfg);
    const auto result = run_greedy(cfg, train_full, test, out_dir);
    save_checkpoint(result.net, out_dir / "model.ckpt", cfg.checkpoint_encoding);
    write_plan(out_dir / "plan.txt", result.plan);
    fmt::print(out, "total_nnz={} test_accuracy={}\n", result.net.nonzero_count(), accuracy(result.net, test));
}

void cmd_threshold(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
    const auto [train_set, test] = load_datasets(cfg);
    const auto dense = starting_network(cfg, train_set, &test, out_dir);
    ThresholdConfig tc;
    tc.retrain = cfg.train;
    tc.retrain.max_iterations = cfg.finetune_iterations;
    tc.period = cfg.l0_period;
    tc.jobs = cfg.jobs;
    const auto rows = threshold_compare(dense, cfg.deltas, train_set, test, tc);
    write_file(out_dir / "threshold_compare.csv",
               [&](std::ostream& o) { write_threshold_csv(o, dense.parameter_layer_names(), rows); });
    fmt::print(out, "rows={}\n", rows.size());
}

void cmd_ensemble(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
    const auto [train_set, test] = load_datasets(cfg);
    std::vector<std::string> names;
    std::vector<CandidateRecord> log;
    if (cfg.plan_log.empty()) {
        auto result = run_greedy(cfg, train_set, test, out_dir);
        names = std::move(result.layer_names);
        log = std::move(result.log);
    } else {
        std::ifstream in(cfg.plan_log, std::ios::binary);
        if (!in) throw IoError("cannot open plan log " + cfg.plan_log);
        log = read_candidate_log_csv(in, names);
    }
    const auto prototype = build_topology<float>(cfg.topology, cfg.train.seed);
    const std::size_t budget = cfg.budget > 0 ? cfg.budget : prototype.parameter_count();

    std::string table = "n,trial,test_acc,total_nnz,budget\n";
    double sum = 0.0;
    for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
        EnsembleConfig ec;
        ec.train = cfg.train;
        ec.train.seed = derive_seed(cfg.train.seed, "trial", trial);
        ec.period = cfg.l0_period;
        ec.jobs = cfg.jobs;
        const auto model = train_ensemble(cfg.ensemble_size, budget, names, log, prototype, train_set, ec);
        const double acc = ensemble_accuracy(model, test);
        sum += acc;
        table += fmt::format("{},{},{},{},{}\n", cfg.ensemble_size, trial, acc, model.total_nnz(), budget);
        for (std::size_t m = 0; m < model.size(); ++m) {
            save_checkpoint(model.members[m], out_dir / fmt::format("member_t{}_m{}.ckpt", trial, m),
                            cfg.checkpoint_encoding);
        }
    }
    write_file(out_dir / "ensemble.csv", [&](std::ostream& o) { o << table; });
    fmt::print(out, "mean_test_accuracy={}\n", sum / static_cast<double>(cfg.trials));
}

void cmd_sweep(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
    const auto [train_set, test] = load_datasets(cfg);
    const auto prototype = build_topology<float>(cfg.topology, cfg.train.seed);
    SweepConfig sc;
    sc.dense_train = cfg.train;
    sc.sparse_train = cfg.train;
    sc.seed = cfg.train.seed;
    sc.jobs = cfg.jobs;
    for (const auto* p : prototype.parameter_layers()) {
        RegSpec dense;
        dense.kind = cfg.default_kind;
        dense.lambda = cfg.default_lambda;
        dense.delta_mode = cfg.l1_delta_mode;
        sc.dense_specs[p->name] = dense;
        auto it = cfg.layers.find(p->name);
        if (it != cfg.layers.end() && it->second.kind == RegKind::l0_projection) {
            sc.sparse_specs[p->name] = it->second;
        } else {
            const auto cap = static_cast<std::size_t>(std::ceil(cfg.sparse_ratio * static_cast<double>(p->parameter_count())));
            RegSpec sparse = RegSpec::l0(std::max<std::size_t>(cap, 1), cfg.l0_period);
            sparse.apply_to_biases = true;
            sc.sparse_specs[p->name] = sparse;
        }
    }
    const auto rows = data_starvation_sweep(cfg.fractions, prototype, train_set, test, sc);
    write_file(out_dir / "data_sweep.csv", [&](std::ostream& o) { write_sweep_csv(o, rows); });
    fmt::print(out, "rows={}\n", rows.size());
}

}  // namespace

std::pair<Dataset, Dataset> load_datasets(const RunConfig& cfg) {
    const fs::path dir = cfg.data_dir;
    Dataset train_set;
    Dataset test;
    if (cfg.dataset == "mnist") {
        train_set = load_mnist(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
        test = load_mnist(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
    } else if (cfg.dataset == "cifar10") {
        const auto cifar = find_cifar_dir(dir);
        std::vector<fs::path> batches;
        for (int i = 1; i <= 5; ++i) batches.push_back(cifar / fmt::format("data_batch_{}.bin", i));
        const std::vector<fs::path> test_batch{cifar / "test_batch.bin"};
        train_set = load_cifar10(batches);
        test = load_cifar10(test_batch);
    } else {
        throw ConfigError("unknown dataset " + cfg.dataset);
    }
    train_set = take_first(train_set, cfg.train_subset);
    test = take_first(test, cfg.test_subset);
    if (cfg.subtract_mean) return subtract_mean(train_set, test);
    return {std::move(train_set), std::move(test)};
}

std::string run_manifest(const RunConfig& cfg) {
    const auto text = serialize_config(cfg);
    const auto root = cfg.train.seed;
    std::string m;
    m += fmt::format("version = {}\n", SPARSECNN_VERSION);
    m += fmt::format("command = {}\n", to_string(cfg.command));
    m += fmt::format("config_hash = {:016x}\n", fnv1a64(text));
    m += fmt::format("root_seed = {}\n", root);
    for (const char* label : {"batches", "validation", "subsample/0", "bag/0"}) {
        m += fmt::format("seed.{} = {}\n", label, derive_seed(root, label));
    }
    m += "\n# effective config\n";
    m += text;
    return m;
}

void run_command(const RunConfig& cfg, std::ostream& out) {
    validate_config(cfg);
    const fs::path out_dir = cfg.out;
    fs::create_directories(out_dir);
    write_file(out_dir / "run_manifest.txt", [&](std::ostream& o) { o << run_manifest(cfg); });
    switch (cfg.command) {
        case Command::train: cmd_train(cfg, out_dir, out); break;
        case Command::eval: cmd_eval(cfg, out); break;
        case Command::memory_report: cmd_memory_report(cfg, out_dir, out); break;
        case Command::sparsify_greedy: cmd_greedy(cfg, out_dir, out); break;
        case Command::threshold_compare: cmd_threshold(cfg, out_dir, out); break;
        case Command::ensemble: cmd_ensemble(cfg, out_dir, out); break;
        case Command::data_sweep: cmd_sweep(cfg, out_dir, out); break;
    }
}

int run_cli(int argc, char** argv) {
    CLI::App app{"Train and sparsify small CNNs under l1/l0 regularization"};
    app.set_version_flag("--version", std::string(SPARSECNN_VERSION));
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string out_dir;
    std::size_t jobs = 0;
    std::optional<std::uint64_t> seed;
    app.add_option("--config", config_path, "config file")->required();
    app.add_option("--out", out_dir, "output directory (overrides config)");
    app.add_option("--jobs", jobs, "parallel trainings (default 1)")->check(CLI::PositiveNumber);
    app.add_option("--seed", seed, "root seed (overrides config)");

    const std::pair<Command, const char*> commands[] = {
        {Command::train, "train a network from scratch with per-layer regularizers"},
        {Command::sparsify_greedy, "greedy layer-wise l0 cap search on a validation split"},
        {Command::threshold_compare, "post-hoc thresholding versus l0-constrained retraining"},
        {Command::ensemble, "bagged sparse ensemble under a total nonzero budget"},
        {Command::data_sweep, "dense versus sparse accuracy on shrinking training subsets"},
        {Command::memory_report, "per-layer storage cost of a checkpoint or fresh topology"},
        {Command::eval, "test accuracy of a saved checkpoint"},
    };
    for (const auto& [c, help] : commands) app.add_subcommand(to_string(c), help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        RunConfig cfg = load_config(config_path);
        cfg.command = parse_command(app.get_subcommands().front()->get_name());
        if (!out_dir.empty()) cfg.out = out_dir;
        if (jobs > 0) cfg.jobs = jobs;
        if (seed) cfg.train.seed = *seed;
        run_command(cfg, std::cout);
        return 0;
    } catch (const ConfigError& e) {
        fmt::print(std::cerr, "sparsecnn: config error: {}\n", e.what());
        return 2;
    } catch (const IoError& e) {
        fmt::print(std::cerr, "sparsecnn: io error: {}\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        fmt::print(std::cerr, "sparsecnn: numeric error: {}\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        fmt::print(std::cerr, "sparsecnn: error: {}\n", e.what());
        return 1;
    }
}

}  // namespace sparsecnn
