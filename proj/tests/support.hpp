#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "sparsecnn/data.hpp"
#include "sparsecnn/layers.hpp"
#include "sparsecnn/network.hpp"
#include "sparsecnn/rng.hpp"

namespace test_support {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = fs::temp_directory_path() / ("sparsecnn_" + tag + "_" + std::to_string(::getpid()) + "_" +
                                             std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>(v >> s));
}

inline void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<unsigned char> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string read_text(const fs::path& path) {
    const auto b = read_bytes(path);
    return {b.begin(), b.end()};
}

/// IDX image/label pair of n records. Each image is a noisy template of its
/// class, so small nets can learn it.
inline void write_synthetic_idx(const fs::path& images, const fs::path& labels, std::size_t n, std::size_t side,
                                std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<unsigned char> img;
    std::vector<unsigned char> lab;
    put_be32(img, 0x803);
    put_be32(img, static_cast<std::uint32_t>(n));
    put_be32(img, static_cast<std::uint32_t>(side));
    put_be32(img, static_cast<std::uint32_t>(side));
    put_be32(lab, 0x801);
    put_be32(lab, static_cast<std::uint32_t>(n));
    std::uniform_int_distribution<int> noise(0, 60);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(rng() % 10);
        lab.push_back(static_cast<unsigned char>(label));
        for (std::size_t r = 0; r < side; ++r) {
            for (std::size_t c = 0; c < side; ++c) {
                const bool on = (r * side + c) % 10 == static_cast<std::size_t>(label) || r == static_cast<std::size_t>(label) % side;
                img.push_back(static_cast<unsigned char>((on ? 190 : 0) + noise(rng)));
            }
        }
    }
    write_bytes(images, img);
    write_bytes(labels, lab);
}

/// Linearly separable-ish 3-class set of shape (n, 1, 4, 4).
inline sparsecnn::Dataset toy_dataset(std::size_t n, std::uint64_t seed, int classes = 3) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> noise(0.0f, 0.3f);
    sparsecnn::Dataset d;
    d.class_count = classes;
    d.images = sparsecnn::Tensor<float>({n, 1, 4, 4});
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % static_cast<std::size_t>(classes));
        d.labels.push_back(label);
        for (std::size_t p = 0; p < 16; ++p) {
            d.images[i * 16 + p] = (p % static_cast<std::size_t>(classes) == static_cast<std::size_t>(label) ? 1.0f : 0.0f) + noise(rng);
        }
    }
    return d;
}

/// fc(16->8) relu fc(8->classes) on (1,4,4) inputs.
template <typename T>
sparsecnn::Network<T> tiny_fc_net(std::uint64_t seed, int classes = 3, double std = 0.3) {
    using namespace sparsecnn;
    Network<T> net("tiny_fc", {1, 4, 4}, classes);
    net.add_layer(std::make_unique<FullyConnected<T>>("fc1", 16, 8, std));
    net.add_layer(std::make_unique<Relu<T>>("relu1"));
    net.add_layer(std::make_unique<FullyConnected<T>>("fc2", 8, static_cast<std::size_t>(classes), std));
    net.validate();
    net.initialize(seed);
    return net;
}

/// conv(1->2,3x3,pad 1) relu conv(2->2,3x3) pool(2) fc(2->classes) on (1,4,4) inputs.
template <typename T>
sparsecnn::Network<T> tiny_conv_net(std::uint64_t seed, int classes = 3) {
    using namespace sparsecnn;
    Network<T> net("tiny_conv", {1, 4, 4}, classes);
    net.add_layer(std::make_unique<Convolution<T>>("conv1", 1, 2, 3, 1, 0.5));
    net.add_layer(std::make_unique<Relu<T>>("relu1"));
    net.add_layer(std::make_unique<Convolution<T>>("conv2", 2, 2, 3, 0, 0.5));
    net.add_layer(std::make_unique<MaxPool<T>>("pool1", 2));
    net.add_layer(std::make_unique<FullyConnected<T>>("fc1", 2, static_cast<std::size_t>(classes), 0.5));
    net.validate();
    net.initialize(seed);
    return net;
}

template <typename T>
sparsecnn::Tensor<T> random_tensor(const sparsecnn::Shape& shape, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, scale);
    sparsecnn::Tensor<T> t(shape);
    for (auto& v : t.values()) v = static_cast<T>(g(rng));
    return t;
}

}  // namespace test_support
