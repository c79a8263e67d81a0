#include "sparsecnn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "sparsecnn/error.hpp"

namespace sparsecnn {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'C', 'N', 'N', 'C', 'K', 'P'};

class Writer {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        bytes_.insert(bytes_.end(), c, c + n);
    }
    void string16(const std::string& s) {
        if (s.size() > 0xffff) throw FormatError("name too long for checkpoint: " + s);
        u16(static_cast<std::uint16_t>(s.size()));
        raw(s.data(), s.size());
    }
    void shape(const Shape& s) {
        u8(static_cast<std::uint8_t>(s.size()));
        for (auto d : s) u32(static_cast<std::uint32_t>(d));
    }
    std::vector<unsigned char> take() { return std::move(bytes_); }

private:
    std::vector<unsigned char> bytes_;
};

class Reader {
public:
    explicit Reader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

    std::span<const unsigned char> take(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) {
            throw TruncatedError(fmt::format("checkpoint truncated reading {} at byte {} (need {}, have {})", what, pos_,
                                             n, bytes_.size() - pos_));
        }
        auto out = bytes_.subspan(pos_, n);
        pos_ += n;
        return out;
    }
    std::uint8_t u8(const char* what) { return take(1, what)[0]; }
    std::uint16_t u16(const char* what) {
        auto b = take(2, what);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }
    std::uint32_t u32(const char* what) {
        auto b = take(4, what);
        return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    std::string string16(const char* what) {
        const auto n = u16(what);
        auto b = take(n, what);
        return {b.begin(), b.end()};
    }
    Shape shape(const char* what) {
        const auto rank = u8(what);
        Shape s(rank);
        for (auto& d : s) d = u32(what);
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }
    std::size_t position() const { return pos_; }

private:
    std::span<const unsigned char> bytes_;
    std::size_t pos_ = 0;
};

std::vector<float> layer_values(const LayerParams<float>& p) {
    std::vector<float> v(p.weights.values().begin(), p.weights.values().end());
    v.insert(v.end(), p.biases.values().begin(), p.biases.values().end());
    return v;
}

std::uint64_t shape_header_bytes(const Shape& s) {
    return 1 + 4 * s.size();
}

}  // namespace

const char* to_string(CheckpointEncoding encoding) {
    switch (encoding) {
        case CheckpointEncoding::dense: return "dense";
        case CheckpointEncoding::bitmask: return "bitmask";
        case CheckpointEncoding::indexed: return "indexed";
        case CheckpointEncoding::best: return "best";
    }
    return "?";
}

CheckpointEncoding parse_checkpoint_encoding(std::string_view text) {
    for (auto e : {CheckpointEncoding::dense, CheckpointEncoding::bitmask, CheckpointEncoding::indexed,
                   CheckpointEncoding::best}) {
        if (text == to_string(e)) return e;
    }
    throw ConfigError(fmt::format("unknown checkpoint encoding '{}'", text));
}

std::vector<unsigned char> encode_checkpoint(const Network<float>& net, CheckpointEncoding encoding) {
    Writer w;
    w.raw(kMagic, sizeof kMagic);
    w.u32(kCheckpointVersion);
    w.string16(net.topology());
    const auto layers = net.parameter_layers();
    w.u32(static_cast<std::uint32_t>(layers.size()));
    for (const auto* p : layers) {
        const auto values = layer_values(*p);
        const std::uint64_t n = values.size();
        const std::uint64_t nnz = l0_count(std::span<const float>(values));
        StorageFormat format = StorageFormat::dense;
        switch (encoding) {
            case CheckpointEncoding::dense: format = StorageFormat::dense; break;
            case CheckpointEncoding::bitmask: format = StorageFormat::bitmask; break;
            case CheckpointEncoding::indexed: format = StorageFormat::indexed; break;
            case CheckpointEncoding::best: format = best_format(n, nnz); break;
        }
        w.string16(p->name);
        w.u8(static_cast<std::uint8_t>(format));
        w.shape(p->weights.shape());
        w.shape(p->biases.shape());
        w.u32(static_cast<std::uint32_t>(nnz));
        switch (format) {
            case StorageFormat::dense:
                for (float v : values) w.f32(v);
                break;
            case StorageFormat::bitmask: {
                std::vector<unsigned char> mask((n + 7) / 8, 0);
                for (std::size_t i = 0; i < n; ++i) {
                    if (values[i] != 0.0f) mask[i / 8] |= static_cast<unsigned char>(1u << (i % 8));
                }
                w.raw(mask.data(), mask.size());
                for (float v : values) {
                    if (v != 0.0f) w.f32(v);
                }
                break;
            }
            case StorageFormat::indexed:
                for (std::size_t i = 0; i < n; ++i) {
                    if (values[i] != 0.0f) {
                        w.u32(static_cast<std::uint32_t>(i));
                        w.f32(values[i]);
                    }
                }
                break;
        }
    }
    return w.take();
}

Checkpoint decode_checkpoint(std::span<const unsigned char> bytes) {
    Reader r(bytes);
    const auto magic = r.take(sizeof kMagic, "magic");
    if (std::memcmp(magic.data(), kMagic, sizeof kMagic) != 0) throw BadMagicError("not a checkpoint file (bad magic)");
    Checkpoint ckpt;
    ckpt.version = r.u32("version");
    if (ckpt.version != kCheckpointVersion) {
        throw VersionError(fmt::format("checkpoint version {} not supported (expected {})", ckpt.version, kCheckpointVersion));
    }
    ckpt.topology = r.string16("topology");
    const auto count = r.u32("layer count");
    for (std::uint32_t l = 0; l < count; ++l) {
        CheckpointEntry e;
        e.name = r.string16("layer name");
        const auto tag = r.u8("format tag");
        if (tag > static_cast<std::uint8_t>(StorageFormat::indexed)) {
            throw FormatError(fmt::format("layer {}: unknown encoding tag {}", e.name, tag));
        }
        e.format = static_cast<StorageFormat>(tag);
        e.weight_shape = r.shape("weight shape");
        e.bias_shape = r.shape("bias shape");
        e.nnz = r.u32("nnz");
        const std::uint64_t n = shape_size(e.weight_shape) + shape_size(e.bias_shape);
        if (e.nnz > n) throw NnzMismatchError(fmt::format("layer {}: nnz {} exceeds {} parameters", e.name, e.nnz, n));
        const std::size_t start = r.position();
        e.values.assign(n, 0.0f);
        switch (e.format) {
            case StorageFormat::dense: {
                std::uint64_t nonzero = 0;
                for (auto& v : e.values) {
                    v = r.f32("dense payload");
                    nonzero += v != 0.0f;
                }
                if (nonzero != e.nnz) {
                    throw NnzMismatchError(fmt::format("layer {}: header nnz {} but {} nonzero values", e.name, e.nnz, nonzero));
                }
                break;
            }
            case StorageFormat::bitmask: {
                const auto mask = r.take((n + 7) / 8, "bitmask");
                std::uint64_t popcount = 0;
                for (auto b : mask) popcount += static_cast<std::uint64_t>(std::popcount(b));
                if (popcount != e.nnz) {
                    throw NnzMismatchError(fmt::format("layer {}: bitmask has {} bits set, header nnz {}", e.name, popcount, e.nnz));
                }
                if (n % 8 != 0 && (mask.back() >> (n % 8)) != 0) {
                    throw FormatError(fmt::format("layer {}: bitmask padding bits set", e.name));
                }
                for (std::size_t i = 0; i < n; ++i) {
                    if (mask[i / 8] & (1u << (i % 8))) e.values[i] = r.f32("bitmask values");
                }
                break;
            }
            case StorageFormat::indexed: {
                std::int64_t previous = -1;
                for (std::uint32_t k = 0; k < e.nnz; ++k) {
                    const auto index = r.u32("index");
                    const float v = r.f32("indexed value");
                    if (index >= n || static_cast<std::int64_t>(index) <= previous) {
                        throw FormatError(fmt::format("layer {}: index {} out of order or range", e.name, index));
                    }
                    previous = index;
                    e.values[index] = v;
                }
                break;
            }
        }
        e.payload_bytes = r.position() - start;
        ckpt.entries.push_back(std::move(e));
    }
    if (!r.done()) throw FormatError(fmt::format("{} trailing bytes after checkpoint", bytes.size() - r.position()));
    return ckpt;
}

void save_checkpoint(const Network<float>& net, const std::filesystem::path& path, CheckpointEncoding encoding) {
    const auto bytes = encode_checkpoint(net, encoding);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return decode_checkpoint(bytes);
}

void apply_checkpoint(const Checkpoint& checkpoint, Network<float>& net) {
    auto layers = net.parameter_layers();
    if (layers.size() != checkpoint.entries.size()) {
        throw FormatError(fmt::format("checkpoint has {} layers, network {} has {}", checkpoint.entries.size(),
                                      net.topology(), layers.size()));
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& e = checkpoint.entries[i];
        auto& p = *layers[i];
        if (e.name != p.name || e.weight_shape != p.weights.shape() || e.bias_shape != p.biases.shape()) {
            throw FormatError(fmt::format("checkpoint layer {} {} {} does not match network layer {} {} {}", e.name,
                                          shape_string(e.weight_shape), shape_string(e.bias_shape), p.name,
                                          shape_string(p.weights.shape()), shape_string(p.biases.shape())));
        }
        std::copy_n(e.values.begin(), p.weights.size(), p.weights.data());
        std::copy(e.values.begin() + static_cast<std::ptrdiff_t>(p.weights.size()), e.values.end(), p.biases.data());
    }
}

Network<float> load_checkpoint(const std::filesystem::path& path) {
    const Checkpoint ckpt = read_checkpoint(path);
    Network<float> net = [&] {
        try {
            return build_topology<float>(ckpt.topology);
        } catch (const ConfigError& e) {
            throw FormatError(path.string() + ": " + e.what());
        }
    }();
    apply_checkpoint(ckpt, net);
    return net;
}

std::uint64_t checkpoint_header_bytes(const Network<float>& net) {
    std::uint64_t bytes = sizeof kMagic + 4 + 2 + net.topology().size() + 4;
    for (const auto* p : net.parameter_layers()) {
        bytes += 2 + p->name.size() + 1 + shape_header_bytes(p->weights.shape()) + shape_header_bytes(p->biases.shape()) + 4;
    }
    return bytes;
}

MemoryReport memory_report(const Checkpoint& checkpoint, unsigned value_bytes) {
    std::vector<LayerCount> layers;
    for (const auto& e : checkpoint.entries) layers.push_back({e.name, e.values.size(), e.nnz});
    return memory_report(layers, value_bytes);
}

}  // namespace sparsecnn
