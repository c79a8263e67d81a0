#include <doctest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "sparsecnn/cli.hpp"
#include "sparsecnn/config.hpp"
#include "sparsecnn/error.hpp"
#include "support.hpp"

using namespace sparsecnn;
using namespace test_support;

namespace {

std::string error_of(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

RunConfig random_config(std::mt19937_64& rng) {
    auto pick = [&](auto... options) {
        const std::vector<std::common_type_t<decltype(options)...>> v{options...};
        return v[rng() % v.size()];
    };
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    RunConfig c;
    c.command = pick(Command::train, Command::sparsify_greedy, Command::ensemble, Command::memory_report);
    c.topology = pick(std::string("lenet_small"), std::string("cifar_quick"));
    c.dataset = c.topology == "lenet_small" ? "mnist" : "cifar10";
    c.data_dir = pick(std::string("data/x"), std::string("/abs/path with space"));
    c.train_subset = rng() % 5000;
    c.subtract_mean = rng() % 2;
    c.out = "out/" + std::to_string(rng() % 100);
    c.jobs = 1 + rng() % 4;
    c.train.seed = rng();
    c.train.batch_size = 1 + rng() % 128;
    c.train.base_lr = unit(rng) * 0.1 + 1e-6;
    c.train.lr_gamma = 0.1 + unit(rng);
    c.train.lr_step = static_cast<long>(rng() % 5000);
    c.train.momentum = unit(rng) * 0.99;
    c.train.max_iterations = 1 + static_cast<long>(rng() % 100000);
    c.default_kind = pick(RegKind::none, RegKind::l2_decay, RegKind::l1_shrinkage, RegKind::l1_subgradient);
    c.default_lambda = unit(rng) * 1e-3;
    c.l1_delta_mode = pick(DeltaMode::scaled, DeltaMode::fixed);
    c.checkpoint_encoding = pick(CheckpointEncoding::best, CheckpointEncoding::indexed);
    c.target_ratio = 0.01 + 0.9 * unit(rng);
    c.deltas = {0.0, unit(rng) * 0.1, 1.0 / 3.0};
    c.fractions = {0.02, unit(rng) * 0.9 + 0.05, 1.0};
    c.ensemble_size = 1 + rng() % 5;
    c.units = pick(ByteUnit::bytes, ByteUnit::kb, ByteUnit::mb);
    c.value_bytes = pick(4u, 8u);
    const auto names = build_topology<float>(c.topology).parameter_layer_names();
    for (const auto& name : names) {
        if (rng() % 2) continue;
        RegSpec s;
        s.kind = pick(RegKind::l0_projection, RegKind::l2_decay, RegKind::l1_shrinkage, RegKind::threshold_posthoc);
        s.lambda = unit(rng) * 0.01;
        s.apply_to_biases = rng() % 2;
        if (s.kind == RegKind::l0_projection) {
            s.cap = 1 + rng() % 1000;
            s.period = 1 + static_cast<long>(rng() % 200);
            if (rng() % 2) s.stages = {{100, s.cap / 2 + 1}, {200, s.cap / 4 + 1}};
        }
        c.layers[name] = s;
    }
    return c;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("shipped example configs load, validate and round-trip") {
    std::size_t count = 0;
    for (const auto& entry : std::filesystem::directory_iterator(SPARSECNN_CONFIG_DIR)) {
        if (entry.path().extension() != ".cfg") continue;
        CAPTURE(entry.path().string());
        const RunConfig cfg = load_config(entry.path());
        CHECK_NOTHROW(validate_config(cfg));
        CHECK(parse_config(serialize_config(cfg)) == cfg);
        ++count;
    }
    CHECK(count >= 3);
}

TEST_CASE("minimal config with one l0 block") {
    const auto cfg = parse_config(R"(# toy
command = train
topology = lenet_small
data_dir = data/mnist   # trailing comment

[layer:fc1]
kind = l0_projection
t = 40050
)");
    CHECK(cfg.command == Command::train);
    REQUIRE(cfg.layers.size() == 1);
    CHECK(cfg.layers.at("fc1").kind == RegKind::l0_projection);
    CHECK(cfg.layers.at("fc1").cap == 40050);
    CHECK(cfg.layers.at("fc1").period == 100);

    const auto specs = cfg.resolve_specs({"conv1", "fc1"});
    CHECK(specs.at("conv1").kind == RegKind::none);
    CHECK(specs.at("fc1").cap == 40050);
}

TEST_CASE("parse errors name the line") {
    CHECK(error_of("topology = lenet_small\ntopology = lenet_small\n").find("line 2: duplicate key 'topology'") !=
          std::string::npos);
    CHECK(error_of("\n\nlearning_rate = 0.1\n").find("line 3: unknown key") != std::string::npos);
    CHECK(error_of("[layer:fc1]\nkind = l0_projection\n").find("line 1") != std::string::npos);
    CHECK(error_of("[layer:fc1]\nkind = l0_projection\n").find("sets no t") != std::string::npos);
    CHECK(error_of("default_kind = l3\n").find("line 1: default_kind") != std::string::npos);
    CHECK(error_of("[layer:fc7]\nkind = l2_decay\n").find("no layer 'fc7'") != std::string::npos);
    CHECK(error_of("topology = vgg\n").find("line 1") != std::string::npos);
    CHECK(error_of("batch_size = 12x\n").find("line 1") != std::string::npos);
    CHECK(error_of("just words\n").find("line 1") != std::string::npos);
    CHECK(error_of("[layer:fc1]\nkind = l2_decay\nkind = l1_shrinkage\n").find("line 3") != std::string::npos);
    CHECK(error_of("[layer:fc1]\nkind = l2_decay\n[layer:fc1]\n").find("line 3") != std::string::npos);
    CHECK(error_of("[layer:fc1]\nt = 5\nstages = 10-3\n").find("line 3") != std::string::npos);
    CHECK(error_of("momentum = 1.5\n").find("momentum") != std::string::npos);
    CHECK(error_of("command = eval\n").find("checkpoint") != std::string::npos);
    CHECK(error_of("command = threshold-compare\n").find("deltas") != std::string::npos);
    CHECK(error_of("subtract_mean = maybe\n").find("line 1") != std::string::npos);
    CHECK_FALSE(error_of("[layer:fc1]\nkind = l0_projection\nt = 10\nstages = 100:5, 200:2\n").size() > 0);
}

TEST_CASE("parse(serialize(x)) == x") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 60; ++trial) {
        const auto cfg = random_config(rng);
        const auto text = serialize_config(cfg);
        CAPTURE(text);
        const auto back = parse_config(text);
        CHECK(back == cfg);
        CHECK(serialize_config(back) == text);
    }
}

TEST_CASE("manifest is stable and carries the config") {
    RunConfig cfg;
    cfg.train.seed = 77;
    const auto m = run_manifest(cfg);
    CHECK(m == run_manifest(cfg));
    CHECK(m.find("root_seed = 77") != std::string::npos);
    CHECK(m.find("config_hash = ") != std::string::npos);
    CHECK(m.find(serialize_config(cfg)) != std::string::npos);
    cfg.train.seed = 78;
    CHECK(run_manifest(cfg) != m);
}

TEST_CASE("command line exit codes and outputs") {
    TempDir dir("cli");
    auto run = [&](std::vector<std::string> args) {
        std::vector<char*> argv;
        std::string prog = "sparsecnn";
        argv.push_back(prog.data());
        for (auto& a : args) argv.push_back(a.data());
        return run_cli(static_cast<int>(argv.size()), argv.data());
    };
    write_bytes(dir / "bad.cfg", {'x', ' ', '=', ' ', '1', '\n'});
    CHECK(run({"train", "--config", (dir / "bad.cfg").string()}) == 2);
    CHECK(run({"train", "--config", (dir / "absent.cfg").string()}) == 3);
    CHECK(run({"train"}) == 2);
    CHECK(run({"--config", (dir / "bad.cfg").string()}) == 2);

    const std::string report_cfg = "topology = cifar_quick\ndataset = cifar10\n";
    std::ofstream(dir / "report.cfg") << report_cfg;
    const auto out = (dir / "report").string();
    CHECK(run({"memory-report", "--config", (dir / "report.cfg").string(), "--out", out}) == 0);
    const auto csv = read_text(dir / "report" / "memory_report.csv");
    CHECK(csv.find("conv1,2432,2400,9728,") != std::string::npos);
    std::size_t dense_rows = 0;
    for (std::size_t pos = 0; (pos = csv.find(",dense,", pos)) != std::string::npos; ++pos) ++dense_rows;
    CHECK(dense_rows == 5);
    CHECK(std::filesystem::exists(dir / "report" / "run_manifest.txt"));

    // Missing data files are I/O errors.
    std::ofstream(dir / "train.cfg") << "data_dir = " << (dir / "nowhere").string() << "\nmax_iterations = 1\n";
    CHECK(run({"train", "--config", (dir / "train.cfg").string(), "--out", (dir / "t").string()}) == 3);
}

TEST_CASE("train then eval through the command layer") {
    TempDir dir("cli_train");
    write_synthetic_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", 256, 28, 1);
    write_synthetic_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", 64, 28, 2);
    RunConfig cfg;
    cfg.data_dir = dir.path().string();
    cfg.out = (dir / "run").string();
    cfg.train.max_iterations = 20;
    cfg.train.eval_interval = 10;
    cfg.train.batch_size = 16;
    std::ostringstream out;
    run_command(cfg, out);
    CHECK(out.str().starts_with("test_accuracy="));
    const auto model = dir / "run" / "model.ckpt";
    CHECK(std::filesystem::exists(model));
    CHECK(read_text(dir / "run" / "metrics.csv").starts_with("iteration,loss,reg_term,train_acc,test_acc,nnz_conv1"));

    RunConfig eval = cfg;
    eval.command = Command::eval;
    eval.checkpoint = model.string();
    eval.out = (dir / "eval").string();
    std::ostringstream eval_out;
    run_command(eval, eval_out);
    const auto line = eval_out.str();
    CHECK(line.starts_with("test_accuracy="));
    CHECK(std::count(line.begin(), line.end(), '\n') == 1);
    CHECK(line == out.str());
}

}
