#include "sparsecnn/memory_report.hpp"

#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "sparsecnn/error.hpp"

namespace sparsecnn {

namespace {

void check_value_bytes(unsigned value_bytes) {
    if (value_bytes != 4 && value_bytes != 8) {
        throw ConfigError(fmt::format("value width must be 4 or 8 bytes, got {}", value_bytes));
    }
}

}  // namespace

const char* to_string(StorageFormat format) {
    switch (format) {
        case StorageFormat::dense: return "dense";
        case StorageFormat::bitmask: return "bitmask";
        case StorageFormat::indexed: return "indexed";
    }
    return "?";
}

StorageFormat parse_storage_format(std::string_view text) {
    for (auto f : {StorageFormat::dense, StorageFormat::bitmask, StorageFormat::indexed}) {
        if (text == to_string(f)) return f;
    }
    throw ConfigError(fmt::format("unknown storage format '{}'", text));
}

std::uint64_t bytes_dense(std::uint64_t params, unsigned value_bytes) {
    check_value_bytes(value_bytes);
    return value_bytes * params;
}

std::uint64_t bytes_bitmask(std::uint64_t params, std::uint64_t nnz, unsigned value_bytes) {
    check_value_bytes(value_bytes);
    if (nnz > params) throw ConfigError(fmt::format("nnz {} exceeds parameter count {}", nnz, params));
    return (params + 7) / 8 + value_bytes * nnz;
}

std::uint64_t bytes_indexed(std::uint64_t nnz, unsigned value_bytes) {
    check_value_bytes(value_bytes);
    return (4 + value_bytes) * nnz;
}

std::uint64_t format_bytes(StorageFormat format, std::uint64_t params, std::uint64_t nnz, unsigned value_bytes) {
    if (nnz > params) throw ConfigError(fmt::format("nnz {} exceeds parameter count {}", nnz, params));
    switch (format) {
        case StorageFormat::dense: return bytes_dense(params, value_bytes);
        case StorageFormat::bitmask: return bytes_bitmask(params, nnz, value_bytes);
        case StorageFormat::indexed: return bytes_indexed(nnz, value_bytes);
    }
    throw ConfigError("unknown storage format");
}

StorageFormat best_format(std::uint64_t params, std::uint64_t nnz, unsigned value_bytes) {
    StorageFormat best = StorageFormat::dense;
    std::uint64_t best_bytes = format_bytes(best, params, nnz, value_bytes);
    for (auto f : {StorageFormat::bitmask, StorageFormat::indexed}) {
        const auto b = format_bytes(f, params, nnz, value_bytes);
        if (b < best_bytes) {
            best = f;
            best_bytes = b;
        }
    }
    return best;
}

MemoryReport memory_report(const std::vector<LayerCount>& layers, unsigned value_bytes) {
    check_value_bytes(value_bytes);
    MemoryReport report;
    report.value_bytes = value_bytes;
    report.totals.name = "total";
    for (const auto& layer : layers) {
        MemoryRow row;
        row.name = layer.name;
        row.params = layer.params;
        row.nnz = layer.nnz;
        row.bytes_dense = bytes_dense(layer.params, value_bytes);
        row.bytes_bitmask = bytes_bitmask(layer.params, layer.nnz, value_bytes);
        row.bytes_indexed = bytes_indexed(layer.nnz, value_bytes);
        row.best = best_format(layer.params, layer.nnz, value_bytes);
        row.best_bytes = format_bytes(*row.best, layer.params, layer.nnz, value_bytes);

        report.totals.params += row.params;
        report.totals.nnz += row.nnz;
        report.totals.bytes_dense += row.bytes_dense;
        report.totals.bytes_bitmask += row.bytes_bitmask;
        report.totals.bytes_indexed += row.bytes_indexed;
        report.totals.best_bytes += row.best_bytes;
        report.rows.push_back(std::move(row));
    }
    return report;
}

template <typename T>
MemoryReport memory_report(const Network<T>& net, unsigned value_bytes) {
    std::vector<LayerCount> layers;
    for (const auto* p : net.parameter_layers()) layers.push_back({p->name, p->parameter_count(), p->nonzero_count()});
    return memory_report(layers, value_bytes);
}

const char* to_string(ByteUnit unit) {
    switch (unit) {
        case ByteUnit::bytes: return "bytes";
        case ByteUnit::kb: return "kb";
        case ByteUnit::mb: return "mb";
    }
    return "?";
}

ByteUnit parse_byte_unit(std::string_view text) {
    if (text == "bytes") return ByteUnit::bytes;
    if (text == "kb") return ByteUnit::kb;
    if (text == "mb") return ByteUnit::mb;
    throw ConfigError(fmt::format("unknown unit '{}' (expected bytes, kb or mb)", text));
}

std::string format_size(std::uint64_t bytes, ByteUnit unit) {
    switch (unit) {
        case ByteUnit::bytes: return fmt::format("{}", bytes);
        case ByteUnit::kb: return fmt::format("{:.2f}", static_cast<double>(bytes) / 1024.0);
        case ByteUnit::mb: return fmt::format("{:.2f}", static_cast<double>(bytes) / (1024.0 * 1024.0));
    }
    return {};
}

namespace {

const char* unit_label(ByteUnit unit) {
    switch (unit) {
        case ByteUnit::bytes: return "B";
        case ByteUnit::kb: return "KB";
        case ByteUnit::mb: return "MB";
    }
    return "";
}

}  // namespace

std::string format_report_table(const MemoryReport& report, ByteUnit unit) {
    const char* u = unit_label(unit);
    std::string out = fmt::format("{:<10} {:>12} {:>12} {:>14} {:>14} {:>14} {:>8} {:>14}\n", "layer", "params", "nnz",
                                  fmt::format("dense[{}]", u), fmt::format("bitmask[{}]", u),
                                  fmt::format("indexed[{}]", u), "best", fmt::format("best[{}]", u));
    auto line = [&](const MemoryRow& r) {
        out += fmt::format("{:<10} {:>12} {:>12} {:>14} {:>14} {:>14} {:>8} {:>14}\n", r.name, r.params, r.nnz,
                           format_size(r.bytes_dense, unit), format_size(r.bytes_bitmask, unit),
                           format_size(r.bytes_indexed, unit), r.best ? to_string(*r.best) : "-",
                           format_size(r.best_bytes, unit));
    };
    for (const auto& r : report.rows) line(r);
    line(report.totals);
    return out;
}

void write_report_csv(std::ostream& out, const MemoryReport& report, ByteUnit unit) {
    out << "layer,params,nnz,bytes_dense,bytes_bitmask,bytes_indexed,best_format,best_bytes\n";
    auto line = [&](const MemoryRow& r) {
        fmt::print(out, "{},{},{},{},{},{},{},{}\n", r.name, r.params, r.nnz, format_size(r.bytes_dense, unit),
                   format_size(r.bytes_bitmask, unit), format_size(r.bytes_indexed, unit),
                   r.best ? to_string(*r.best) : "", format_size(r.best_bytes, unit));
    };
    for (const auto& r : report.rows) line(r);
    line(report.totals);
}

template MemoryReport memory_report(const Network<float>&, unsigned);
template MemoryReport memory_report(const Network<double>&, unsigned);

}  // namespace sparsecnn
