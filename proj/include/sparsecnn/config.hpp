#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "sparsecnn/checkpoint.hpp"
#include "sparsecnn/memory_report.hpp"
#include "sparsecnn/optimizer.hpp"
#include "sparsecnn/regularizers.hpp"

namespace sparsecnn {

enum class Command { train, sparsify_greedy, threshold_compare, ensemble, data_sweep, memory_report, eval };

const char* to_string(Command command);
Command parse_command(std::string_view text);

// Config files are UTF-8, one `key = value` per line, `#` starts a comment.
// Global keys come first; `[layer:NAME]` opens a block of per-layer
// regularization keys (kind, lambda, t, period, biases, stages) that
// overrides the default_* settings for that layer.
//
//   command = train
//   topology = lenet_small
//   dataset = mnist
//   data_dir = data/mnist
//   max_iterations = 2000
//   default_kind = l2_decay
//   default_lambda = 0.0005
//
//   [layer:fc1]
//   kind = l0_projection
//   t = 40000
//   stages = 1000:20000
//
// Unknown keys, repeated keys and bad values are errors that name the line.
struct RunConfig {
    Command command = Command::train;
    std::string topology = "lenet_small";
    /// mnist or cifar10
    std::string dataset = "mnist";
    std::string data_dir = "data/mnist";
    /// 0 keeps every record.
    std::size_t train_subset = 0;
    std::size_t test_subset = 0;
    bool subtract_mean = false;
    /// Input checkpoint for eval, memory-report and the protocols' starting network.
    std::string checkpoint;
    std::string out = "out";
    std::size_t jobs = 1;

    /// train.seed is the root seed of the run.
    TrainConfig train;
    RegKind default_kind = RegKind::none;
    double default_lambda = 0.0;
    DeltaMode l1_delta_mode = DeltaMode::scaled;
    std::map<std::string, RegSpec> layers;
    CheckpointEncoding checkpoint_encoding = CheckpointEncoding::best;

    double val_fraction = 0.1;
    /// Greedy stops at target_nnz, or at target_ratio of the dense count when target_nnz is 0.
    std::size_t target_nnz = 0;
    double target_ratio = 0.2;
    long finetune_iterations = 2000;
    long l0_period = 100;
    std::vector<double> deltas;
    std::size_t ensemble_size = 1;
    /// 0 means the dense parameter count of the topology.
    std::size_t budget = 0;
    std::size_t trials = 1;
    /// Candidate log CSV from sparsify-greedy; ensemble runs the search itself when empty.
    std::string plan_log;
    std::vector<double> fractions;
    /// Per-layer nnz share of the sparse regime in data-sweep, for layers without an l0 block.
    double sparse_ratio = 0.1;
    ByteUnit units = ByteUnit::bytes;
    unsigned value_bytes = 4;

    /// Layer specs for `train`: default_* for every layer, then the blocks.
    RegSpecs resolve_specs(const std::vector<std::string>& layer_names) const;

    bool operator==(const RunConfig&) const = default;
};

/// Throws ConfigError ("line N: ...") on malformed input or failed validation.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
/// Canonical text: every global key, then layer blocks by name.
std::string serialize_config(const RunConfig& cfg);
/// Cross-field checks, including that every block names a layer of the topology.
void validate_config(const RunConfig& cfg);

}  // namespace sparsecnn
