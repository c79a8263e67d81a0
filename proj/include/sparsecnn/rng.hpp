#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace sparsecnn {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

/// Expands the single root seed into an independent stream per component
/// label ("init", "batches", "bag/3", ...).
std::uint64_t derive_seed(std::uint64_t root, std::string_view label);
std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t index);

}  // namespace sparsecnn
