#pragma once

#include <filesystem>
#include <iosfwd>
#include <utility>

#include "sparsecnn/config.hpp"
#include "sparsecnn/data.hpp"

namespace sparsecnn {

/// (train, test) as described by the config: subset, then optional mean subtraction.
std::pair<Dataset, Dataset> load_datasets(const RunConfig& cfg);

/// Executes cfg.command, writing artifacts under cfg.out and a one-line
/// summary to `out`. Throws the library's Error types.
void run_command(const RunConfig& cfg, std::ostream& out);

/// Text of run_manifest.txt for cfg.
std::string run_manifest(const RunConfig& cfg);

/// Exit codes: 0 ok, 1 other failure, 2 config, 3 io, 4 numeric.
int run_cli(int argc, char** argv);

}  // namespace sparsecnn
