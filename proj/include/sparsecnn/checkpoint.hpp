#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sparsecnn/memory_report.hpp"
#include "sparsecnn/network.hpp"

namespace sparsecnn {

// Binary layout, all integers little-endian, values IEEE-754 float32:
//
//   file    := "SPCNNCKP" u32:version u16:len topology[len] u32:layer_count entry*
//   entry   := u16:len name[len] u8:format u8:rank u32:dim*rank u8:rank u32:dim*rank
//              u32:nnz payload
//   payload := dense   : f32 * N
//            | bitmask : ceil(N/8) bytes (bit i = byte i/8, bit i%8, LSB first), f32 * nnz
//            | indexed : (u32 index, f32 value) * nnz, indices strictly increasing
//
// Each layer stores its N = weights + biases values as one flat vector,
// weights first. Payload sizes equal the memory model's byte costs exactly;
// everything else is checkpoint_header_bytes().
//
// Exact zeros are the absent entries of the sparse formats, so -0.0 loads as +0.0.

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// `best` picks the cheapest format per layer.
enum class CheckpointEncoding { dense, bitmask, indexed, best };

const char* to_string(CheckpointEncoding encoding);
CheckpointEncoding parse_checkpoint_encoding(std::string_view text);

struct CheckpointEntry {
    std::string name;
    StorageFormat format = StorageFormat::dense;
    Shape weight_shape;
    Shape bias_shape;
    std::uint32_t nnz = 0;
    /// Decoded weights followed by biases.
    std::vector<float> values;
    std::uint64_t payload_bytes = 0;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::string topology;
    std::vector<CheckpointEntry> entries;
};

std::vector<unsigned char> encode_checkpoint(const Network<float>& net, CheckpointEncoding encoding);
/// Throws BadMagicError, VersionError, TruncatedError, NnzMismatchError or FormatError.
Checkpoint decode_checkpoint(std::span<const unsigned char> bytes);

void save_checkpoint(const Network<float>& net, const std::filesystem::path& path, CheckpointEncoding encoding);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies stored parameters into net; layer names and shapes must match.
void apply_checkpoint(const Checkpoint& checkpoint, Network<float>& net);
/// Rebuilds the recorded topology and fills it from the file.
Network<float> load_checkpoint(const std::filesystem::path& path);

/// Bytes of the file that are not layer payload.
std::uint64_t checkpoint_header_bytes(const Network<float>& net);

MemoryReport memory_report(const Checkpoint& checkpoint, unsigned value_bytes = 4);

}  // namespace sparsecnn
