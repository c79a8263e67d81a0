#include "sparsecnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include <fmt/format.h>

#include "sparsecnn/error.hpp"
#include "sparsecnn/rng.hpp"

namespace sparsecnn {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr std::size_t kCifarPixels = 3 * 32 * 32;
constexpr std::size_t kCifarRecord = 1 + kCifarPixels;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset) {
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void check_length(const std::vector<unsigned char>& bytes, std::size_t expected, const std::filesystem::path& path) {
    if (bytes.size() < expected) {
        throw TruncatedError(fmt::format("{}: expected {} bytes, file has {}", path.string(), expected, bytes.size()));
    }
    if (bytes.size() > expected) {
        throw FormatError(fmt::format("{}: {} trailing bytes after {} expected", path.string(),
                                      bytes.size() - expected, expected));
    }
}

}  // namespace

Shape Dataset::example_shape() const {
    const auto& s = images.shape();
    return Shape(s.begin() + 1, s.end());
}

std::size_t Dataset::example_size() const {
    return shape_size(example_shape());
}

Tensor<float> Dataset::batch_images(std::span<const std::size_t> indices) const {
    Shape shape = images.shape();
    shape[0] = indices.size();
    const std::size_t stride = example_size();
    std::vector<float> values(indices.size() * stride);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= size()) throw ShapeError(fmt::format("record {} out of range {}", indices[i], size()));
        std::copy_n(images.data() + indices[i] * stride, stride, values.data() + i * stride);
    }
    return Tensor<float>(std::move(shape), std::move(values));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(labels.at(i));
    return out;
}

Dataset Dataset::select(std::span<const std::size_t> indices) const {
    if (indices.empty()) throw ShapeError("cannot select an empty dataset");
    Dataset out;
    out.images = batch_images(indices);
    out.labels = batch_labels(indices);
    out.class_count = class_count;
    out.mean_image = mean_image;
    return out;
}

void Dataset::validate() const {
    if (images.rank() != 4) throw FormatError("dataset images must have rank 4, got " + shape_string(images.shape()));
    if (images.dim(0) != labels.size()) {
        throw CountMismatchError(fmt::format("{} images but {} labels", images.dim(0), labels.size()));
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= class_count) {
            throw FormatError(fmt::format("label {} at record {} outside [0,{})", labels[i], i, class_count));
        }
    }
}

Dataset load_mnist(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto image_bytes = read_file(images_path);
    const auto label_bytes = read_file(labels_path);
    if (image_bytes.size() < 16) throw TruncatedError(images_path.string() + ": IDX header truncated");
    if (label_bytes.size() < 8) throw TruncatedError(labels_path.string() + ": IDX header truncated");
    if (read_be32(image_bytes, 0) != kIdxImageMagic) {
        throw BadMagicError(fmt::format("{}: bad IDX image magic {:#010x}", images_path.string(), read_be32(image_bytes, 0)));
    }
    if (read_be32(label_bytes, 0) != kIdxLabelMagic) {
        throw BadMagicError(fmt::format("{}: bad IDX label magic {:#010x}", labels_path.string(), read_be32(label_bytes, 0)));
    }
    const std::size_t n = read_be32(image_bytes, 4);
    const std::size_t rows = read_be32(image_bytes, 8);
    const std::size_t cols = read_be32(image_bytes, 12);
    const std::size_t label_count = read_be32(label_bytes, 4);
    if (n == 0 || rows == 0 || cols == 0) throw FormatError(images_path.string() + ": empty IDX image file");
    check_length(image_bytes, 16 + n * rows * cols, images_path);
    check_length(label_bytes, 8 + label_count, labels_path);
    if (label_count != n) throw CountMismatchError(fmt::format("{} images but {} labels", n, label_count));

    Dataset d;
    std::vector<float> pixels(n * rows * cols);
    std::transform(image_bytes.begin() + 16, image_bytes.end(), pixels.begin(),
                   [](unsigned char b) { return static_cast<float>(b) / 255.0f; });
    d.images = Tensor<float>({n, 1, rows, cols}, std::move(pixels));
    d.labels.assign(label_bytes.begin() + 8, label_bytes.end());
    d.validate();
    return d;
}

Dataset load_cifar10(std::span<const std::filesystem::path> batch_paths) {
    if (batch_paths.empty()) throw ConfigError("load_cifar10: no batch files given");
    std::vector<float> pixels;
    std::vector<int> labels;
    for (const auto& path : batch_paths) {
        const auto bytes = read_file(path);
        if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
            throw FormatError(fmt::format("{}: size {} is not a positive multiple of {}", path.string(),
                                          bytes.size(), kCifarRecord));
        }
        for (std::size_t off = 0; off < bytes.size(); off += kCifarRecord) {
            labels.push_back(bytes[off]);
            for (std::size_t k = 1; k < kCifarRecord; ++k) pixels.push_back(static_cast<float>(bytes[off + k]) / 255.0f);
        }
    }
    Dataset d;
    d.images = Tensor<float>({labels.size(), 3, 32, 32}, std::move(pixels));
    d.labels = std::move(labels);
    d.validate();
    return d;
}

Tensor<float> mean_image(const Dataset& d) {
    const std::size_t stride = d.example_size();
    std::vector<double> sum(stride, 0.0);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const float* x = d.images.data() + i * stride;
        for (std::size_t k = 0; k < stride; ++k) sum[k] += x[k];
    }
    std::vector<float> mean(stride);
    for (std::size_t k = 0; k < stride; ++k) mean[k] = static_cast<float>(sum[k] / static_cast<double>(d.size()));
    return Tensor<float>(d.example_shape(), std::move(mean));
}

std::pair<Dataset, Dataset> subtract_mean(const Dataset& train, const Dataset& other) {
    if (train.example_shape() != other.example_shape()) {
        throw ShapeError(fmt::format("subtract_mean: example shapes {} vs {}", shape_string(train.example_shape()),
                                     shape_string(other.example_shape())));
    }
    const Tensor<float> mean = mean_image(train);
    auto shift = [&mean](const Dataset& d) {
        Dataset out = d;
        const std::size_t stride = mean.size();
        for (std::size_t i = 0; i < out.size(); ++i) {
            float* x = out.images.data() + i * stride;
            for (std::size_t k = 0; k < stride; ++k) x[k] -= mean[k];
        }
        out.mean_image = mean;
        return out;
    };
    return {shift(train), shift(other)};
}

std::vector<std::size_t> subsample_indices(std::size_t n, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw ConfigError(fmt::format("subsample fraction must be in (0,1], got {}", fraction));
    }
    // The small bias keeps e.g. 0.29 * 100 from flooring to 28.
    const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-7));
    if (count == 0) throw ConfigError(fmt::format("subsample of {} records at fraction {} is empty", n, fraction));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(count);
    std::sort(order.begin(), order.end());
    return order;
}

Dataset subsample(const Dataset& d, double fraction, std::uint64_t seed) {
    const auto idx = subsample_indices(d.size(), fraction, seed);
    return d.select(idx);
}

std::vector<std::size_t> bag_indices(std::size_t n, std::uint64_t seed) {
    if (n == 0) throw ShapeError("bag_resample of an empty dataset");
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::size_t> out(n);
    for (auto& i : out) i = pick(rng);
    return out;
}

Dataset bag_resample(const Dataset& d, std::uint64_t seed) {
    const auto idx = bag_indices(d.size(), seed);
    return d.select(idx);
}

std::pair<Dataset, Dataset> split_validation(const Dataset& d, double val_fraction, std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw ConfigError(fmt::format("validation fraction must be in (0,1), got {}", val_fraction));
    }
    const std::size_t n = d.size();
    const auto val_count = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n) + 1e-7));
    if (val_count == 0 || val_count >= n) {
        throw ConfigError(fmt::format("cannot split {} records with validation fraction {}", n, val_fraction));
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const std::span<const std::size_t> all(order);
    return {d.select(all.first(n - val_count)), d.select(all.last(val_count))};
}

Dataset take_first(const Dataset& d, std::size_t count) {
    if (count == 0 || count >= d.size()) return d;
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), 0);
    return d.select(idx);
}

}  // namespace sparsecnn
