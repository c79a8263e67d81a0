#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "sparsecnn/tensor.hpp"

namespace sparsecnn {

/// Labelled image set. images has shape (n, channels, h, w).
struct Dataset {
    Tensor<float> images;
    std::vector<int> labels;
    int class_count = 10;
    std::optional<Tensor<float>> mean_image;

    std::size_t size() const { return labels.size(); }
    /// (channels, h, w)
    Shape example_shape() const;
    std::size_t example_size() const;

    /// Copies the listed records (repeats allowed) into a new dataset.
    Dataset select(std::span<const std::size_t> indices) const;
    Tensor<float> batch_images(std::span<const std::size_t> indices) const;
    std::vector<int> batch_labels(std::span<const std::size_t> indices) const;

    /// Throws FormatError when labels/images disagree or a label is out of range.
    void validate() const;
};

/// IDX image + label pair (magic 0x00000803 / 0x00000801). Pixels scaled to [0,1].
Dataset load_mnist(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// CIFAR-10 binary batches: 3073-byte records of 1 label byte + 3x32x32 pixels.
Dataset load_cifar10(std::span<const std::filesystem::path> batch_paths);

/// Shifts both sets by the per-pixel mean of train; the mean is recorded on both.
std::pair<Dataset, Dataset> subtract_mean(const Dataset& train, const Dataset& other);
Tensor<float> mean_image(const Dataset& d);

/// floor(fraction * n) distinct records, uniformly without replacement, kept in
/// original order.
std::vector<std::size_t> subsample_indices(std::size_t n, double fraction, std::uint64_t seed);
Dataset subsample(const Dataset& d, double fraction, std::uint64_t seed);

/// n draws with replacement.
std::vector<std::size_t> bag_indices(std::size_t n, std::uint64_t seed);
Dataset bag_resample(const Dataset& d, std::uint64_t seed);

/// Seeded shuffle, then the last floor(val_fraction * n) records become the
/// validation set. Returns (train, validation).
std::pair<Dataset, Dataset> split_validation(const Dataset& d, double val_fraction, std::uint64_t seed);

/// First `count` records (all when count == 0 or count >= n).
Dataset take_first(const Dataset& d, std::size_t count);

}  // namespace sparsecnn
