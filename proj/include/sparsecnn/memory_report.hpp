#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sparsecnn/network.hpp"

namespace sparsecnn {

enum class StorageFormat { dense, bitmask, indexed };

const char* to_string(StorageFormat format);
StorageFormat parse_storage_format(std::string_view text);

// Byte costs of storing N parameters of which nnz are nonzero. value_bytes is
// 4 for single precision (the default) or 8 for double; indices are 32-bit.

/// value_bytes * N
std::uint64_t bytes_dense(std::uint64_t params, unsigned value_bytes = 4);
/// ceil(N/8) presence bits + value_bytes * nnz
std::uint64_t bytes_bitmask(std::uint64_t params, std::uint64_t nnz, unsigned value_bytes = 4);
/// (4 + value_bytes) * nnz
std::uint64_t bytes_indexed(std::uint64_t nnz, unsigned value_bytes = 4);

/// Cheapest format; ties resolve dense, then bitmask, then indexed.
StorageFormat best_format(std::uint64_t params, std::uint64_t nnz, unsigned value_bytes = 4);
std::uint64_t format_bytes(StorageFormat format, std::uint64_t params, std::uint64_t nnz, unsigned value_bytes = 4);

struct LayerCount {
    std::string name;
    std::uint64_t params = 0;
    std::uint64_t nnz = 0;
};

struct MemoryRow {
    std::string name;
    std::uint64_t params = 0;
    std::uint64_t nnz = 0;
    std::uint64_t bytes_dense = 0;
    std::uint64_t bytes_bitmask = 0;
    std::uint64_t bytes_indexed = 0;
    /// Empty on the totals row, whose best_bytes sums each layer's own best.
    std::optional<StorageFormat> best;
    std::uint64_t best_bytes = 0;
};

struct MemoryReport {
    unsigned value_bytes = 4;
    std::vector<MemoryRow> rows;
    MemoryRow totals;
};

MemoryReport memory_report(const std::vector<LayerCount>& layers, unsigned value_bytes = 4);

/// Biases are included in each layer's N and nnz.
template <typename T>
MemoryReport memory_report(const Network<T>& net, unsigned value_bytes = 4);

enum class ByteUnit { bytes, kb, mb };

const char* to_string(ByteUnit unit);
ByteUnit parse_byte_unit(std::string_view text);
/// KB = 2^10 bytes, MB = 2^20 bytes.
std::string format_size(std::uint64_t bytes, ByteUnit unit);

std::string format_report_table(const MemoryReport& report, ByteUnit unit);
void write_report_csv(std::ostream& out, const MemoryReport& report, ByteUnit unit);

}  // namespace sparsecnn
