#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sparsecnn/data.hpp"
#include "sparsecnn/layers.hpp"

namespace sparsecnn {

/// One entry per parameterized layer, in network order.
template <typename T>
using Gradients = std::vector<ParamGradients<T>>;

/// Feed-forward stack terminated by a softmax cross-entropy loss.
/// forward() returns class probabilities of shape (batch, class_count).
template <typename T>
class Network {
public:
    Network(std::string topology, Shape input_shape, int class_count);
    Network(const Network& other);
    Network& operator=(const Network& other);
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;
    ~Network() = default;

    /// Appends a layer; throws ShapeError if it cannot consume the current output.
    void add_layer(std::unique_ptr<Layer<T>> layer);
    /// Throws ShapeError unless the last layer emits class_count scores.
    void validate() const;

    const std::string& topology() const { return topology_; }
    const Shape& input_shape() const { return input_shape_; }
    int class_count() const { return class_count_; }

    std::size_t layer_count() const { return layers_.size(); }
    Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
    const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

    std::vector<LayerParams<T>*> parameter_layers();
    std::vector<const LayerParams<T>*> parameter_layers() const;
    std::vector<std::string> parameter_layer_names() const;
    LayerParams<T>& params(std::string_view layer_name);
    const LayerParams<T>& params(std::string_view layer_name) const;
    LayerKind kind_of(std::string_view layer_name) const;

    std::size_t parameter_count() const;
    std::size_t nonzero_count() const;

    /// Draws every parameterized layer from its own stream derived from seed.
    void initialize(std::uint64_t seed);

    const Tensor<T>& forward(const Tensor<T>& batch);
    /// Probabilities without retaining activations; safe to call concurrently.
    Tensor<T> infer(const Tensor<T>& batch) const;
    Tensor<T> infer_logits(const Tensor<T>& batch) const;

    const Tensor<T>& logits() const { return logits_; }
    const Tensor<T>& probabilities() const { return probabilities_; }

    /// Mean softmax cross-entropy of the last forward() batch.
    double loss(std::span<const int> labels) const;
    /// Gradient of the mean loss of the last forward() batch.
    Gradients<T> backward(std::span<const int> labels);

private:
    void check_batch(const Tensor<T>& batch) const;

    std::string topology_;
    Shape input_shape_;
    int class_count_;
    std::vector<std::unique_ptr<Layer<T>>> layers_;
    Tensor<T> logits_;
    Tensor<T> probabilities_;
    bool has_forward_ = false;
};

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

/// Mean cross-entropy, computed from logits in double precision.
template <typename T>
double softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// (softmax(logits) - onehot(labels)) / batch
template <typename T>
Tensor<T> softmax_cross_entropy_gradient(const Tensor<T>& logits, std::span<const int> labels);

/// Row-wise argmax; ties go to the lowest class index.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& scores);

double accuracy(const Network<float>& net, const Dataset& data, std::size_t batch_size = 500);
Tensor<float> predict_probabilities(const Network<float>& net, const Tensor<float>& images, std::size_t batch_size = 500);

/// LeNet-family MNIST net: conv(20,5x5) pool conv(50,5x5) pool fc(500) relu fc(10).
template <typename T>
Network<T> build_lenet_small(std::uint64_t seed = 1);

/// CIFAR-10-quick family: three conv(5x5, pad 2)+relu+pool(2) stages with 32/32/64
/// filters, fc(64) relu fc(10).
template <typename T>
Network<T> build_cifar_quick(std::uint64_t seed = 1);

/// Throws ConfigError for unknown names.
template <typename T>
Network<T> build_topology(std::string_view name, std::uint64_t seed = 1);

std::vector<std::string> topology_names();

/// Aligned per-layer parameter-count table.
template <typename T>
std::string parameter_summary(const Network<T>& net);

}  // namespace sparsecnn
