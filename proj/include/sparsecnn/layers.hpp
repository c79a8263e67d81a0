#pragma once

#include <memory>
#include <string>
#include <vector>

#include "sparsecnn/rng.hpp"
#include "sparsecnn/tensor.hpp"

namespace sparsecnn {

enum class LayerKind { convolution, max_pool, relu, fully_connected };

const char* to_string(LayerKind kind);

/// One layer's learned parameters. Biases count toward parameter costs.
template <typename T>
struct LayerParams {
    std::string name;
    Tensor<T> weights;
    Tensor<T> biases;

    std::size_t parameter_count() const { return weights.size() + biases.size(); }
    std::size_t nonzero_count() const { return l0_count(weights) + l0_count(biases); }
};

template <typename T>
struct ParamGradients {
    Tensor<T> weights;
    Tensor<T> biases;
};

/// Explicit forward/backward layer. Shapes passed to output_shape() exclude
/// the batch dimension; tensors passed to forward() include it.
template <typename T>
class Layer {
public:
    virtual ~Layer() = default;

    virtual LayerKind kind() const = 0;
    const std::string& name() const { return name_; }

    virtual Shape output_shape(const Shape& input) const = 0;

    /// Pure evaluation; safe to call concurrently on a shared layer.
    virtual Tensor<T> infer(const Tensor<T>& input) const = 0;
    /// Evaluation that retains what backward() needs.
    virtual Tensor<T> forward(const Tensor<T>& input) = 0;
    /// Returns d(loss)/d(input) and overwrites the parameter gradients.
    virtual Tensor<T> backward(const Tensor<T>& grad_output) = 0;

    virtual LayerParams<T>* params() { return nullptr; }
    virtual const LayerParams<T>* params() const { return nullptr; }
    virtual const ParamGradients<T>* gradients() const { return nullptr; }

    /// Zero-mean Gaussian weights, zero biases. No-op for parameter-free layers.
    virtual void initialize(Rng& /*rng*/) {}

    virtual std::unique_ptr<Layer> clone() const = 0;

protected:
    explicit Layer(std::string name) : name_(std::move(name)) {}
    Layer(const Layer&) = default;

private:
    std::string name_;
};

/// Stride-1 convolution with zero padding. Weights are
/// (out-channels, in-channels, kernel-h, kernel-w).
template <typename T>
class Convolution final : public Layer<T> {
public:
    Convolution(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                std::size_t padding = 0, double init_std = 0.01);

    LayerKind kind() const override { return LayerKind::convolution; }
    Shape output_shape(const Shape& input) const override;
    Tensor<T> infer(const Tensor<T>& input) const override;
    Tensor<T> forward(const Tensor<T>& input) override;
    Tensor<T> backward(const Tensor<T>& grad_output) override;
    LayerParams<T>* params() override { return &params_; }
    const LayerParams<T>* params() const override { return &params_; }
    const ParamGradients<T>* gradients() const override { return &grads_; }
    void initialize(Rng& rng) override;
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Convolution>(*this); }

    std::size_t kernel() const { return kernel_; }
    std::size_t padding() const { return padding_; }

private:
    std::size_t in_channels_;
    std::size_t out_channels_;
    std::size_t kernel_;
    std::size_t padding_;
    double init_std_;
    LayerParams<T> params_;
    ParamGradients<T> grads_;
    Tensor<T> input_;
    bool has_input_ = false;
};

/// Max pooling with stride equal to the window; trailing rows/cols that do
/// not fill a window are dropped.
template <typename T>
class MaxPool final : public Layer<T> {
public:
    MaxPool(std::string name, std::size_t window);

    LayerKind kind() const override { return LayerKind::max_pool; }
    Shape output_shape(const Shape& input) const override;
    Tensor<T> infer(const Tensor<T>& input) const override;
    Tensor<T> forward(const Tensor<T>& input) override;
    Tensor<T> backward(const Tensor<T>& grad_output) override;
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool>(*this); }

private:
    Tensor<T> pool(const Tensor<T>& input, std::vector<std::size_t>* argmax) const;

    std::size_t window_;
    Shape input_shape_;
    std::vector<std::size_t> argmax_;
};

template <typename T>
class Relu final : public Layer<T> {
public:
    explicit Relu(std::string name) : Layer<T>(std::move(name)) {}

    LayerKind kind() const override { return LayerKind::relu; }
    Shape output_shape(const Shape& input) const override { return input; }
    Tensor<T> infer(const Tensor<T>& input) const override;
    Tensor<T> forward(const Tensor<T>& input) override;
    Tensor<T> backward(const Tensor<T>& grad_output) override;
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Relu>(*this); }

private:
    Tensor<T> output_;
    bool has_output_ = false;
};

/// Inner-product layer over the flattened input. Weights are (out, in).
template <typename T>
class FullyConnected final : public Layer<T> {
public:
    FullyConnected(std::string name, std::size_t in_features, std::size_t out_features, double init_std = 0.01);

    LayerKind kind() const override { return LayerKind::fully_connected; }
    Shape output_shape(const Shape& input) const override;
    Tensor<T> infer(const Tensor<T>& input) const override;
    Tensor<T> forward(const Tensor<T>& input) override;
    Tensor<T> backward(const Tensor<T>& grad_output) override;
    LayerParams<T>* params() override { return &params_; }
    const LayerParams<T>* params() const override { return &params_; }
    const ParamGradients<T>* gradients() const override { return &grads_; }
    void initialize(Rng& rng) override;
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<FullyConnected>(*this); }

private:
    std::size_t in_features_;
    std::size_t out_features_;
    double init_std_;
    LayerParams<T> params_;
    ParamGradients<T> grads_;
    Tensor<T> input_;
    bool has_input_ = false;
};

}  // namespace sparsecnn
