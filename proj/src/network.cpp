#include "sparsecnn/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "sparsecnn/error.hpp"

namespace sparsecnn {

template <typename T>
Network<T>::Network(std::string topology, Shape input_shape, int class_count)
    : topology_(std::move(topology)), input_shape_(std::move(input_shape)), class_count_(class_count) {
    if (class_count < 1) throw ShapeError("class_count must be positive");
}

template <typename T>
Network<T>::Network(const Network& other)
    : topology_(other.topology_),
      input_shape_(other.input_shape_),
      class_count_(other.class_count_),
      logits_(other.logits_),
      probabilities_(other.probabilities_),
      has_forward_(other.has_forward_) {
    layers_.reserve(other.layers_.size());
    for (const auto& layer : other.layers_) layers_.push_back(layer->clone());
}

template <typename T>
Network<T>& Network<T>::operator=(const Network& other) {
    if (this != &other) {
        Network copy(other);
        *this = std::move(copy);
    }
    return *this;
}

template <typename T>
void Network<T>::add_layer(std::unique_ptr<Layer<T>> layer) {
    Shape current = input_shape_;
    for (const auto& l : layers_) current = l->output_shape(current);
    layer->output_shape(current);
    for (const auto& l : layers_) {
        if (l->name() == layer->name()) throw ShapeError("duplicate layer name " + layer->name());
    }
    layers_.push_back(std::move(layer));
}

template <typename T>
void Network<T>::validate() const {
    Shape current = input_shape_;
    for (const auto& l : layers_) current = l->output_shape(current);
    if (current != Shape{static_cast<std::size_t>(class_count_)}) {
        throw ShapeError(fmt::format("network {} ends in {}, expected ({})", topology_, shape_string(current), class_count_));
    }
}

template <typename T>
std::vector<LayerParams<T>*> Network<T>::parameter_layers() {
    std::vector<LayerParams<T>*> out;
    for (auto& l : layers_) {
        if (auto* p = l->params()) out.push_back(p);
    }
    return out;
}

template <typename T>
std::vector<const LayerParams<T>*> Network<T>::parameter_layers() const {
    std::vector<const LayerParams<T>*> out;
    for (const auto& l : layers_) {
        if (const auto* p = std::as_const(*l).params()) out.push_back(p);
    }
    return out;
}

template <typename T>
std::vector<std::string> Network<T>::parameter_layer_names() const {
    std::vector<std::string> names;
    for (const auto* p : parameter_layers()) names.push_back(p->name);
    return names;
}

template <typename T>
LayerParams<T>& Network<T>::params(std::string_view layer_name) {
    for (auto* p : parameter_layers()) {
        if (p->name == layer_name) return *p;
    }
    throw ConfigError(fmt::format("network {} has no parameterized layer '{}'", topology_, layer_name));
}

template <typename T>
const LayerParams<T>& Network<T>::params(std::string_view layer_name) const {
    return const_cast<Network*>(this)->params(layer_name);
}

template <typename T>
LayerKind Network<T>::kind_of(std::string_view layer_name) const {
    for (const auto& l : layers_) {
        if (l->name() == layer_name) return l->kind();
    }
    throw ConfigError(fmt::format("network {} has no layer '{}'", topology_, layer_name));
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameter_layers()) n += p->parameter_count();
    return n;
}

template <typename T>
std::size_t Network<T>::nonzero_count() const {
    std::size_t n = 0;
    for (const auto* p : parameter_layers()) n += p->nonzero_count();
    return n;
}

template <typename T>
void Network<T>::initialize(std::uint64_t seed) {
    for (auto& l : layers_) {
        Rng rng(derive_seed(seed, "init/" + l->name()));
        l->initialize(rng);
    }
}

template <typename T>
void Network<T>::check_batch(const Tensor<T>& batch) const {
    if (batch.rank() != input_shape_.size() + 1 || !std::equal(input_shape_.begin(), input_shape_.end(), batch.shape().begin() + 1)) {
        throw ShapeError(fmt::format("network {} expects (batch,{}) input, got {}", topology_,
                                     shape_string(input_shape_).substr(1, shape_string(input_shape_).size() - 2),
                                     shape_string(batch.shape())));
    }
}

template <typename T>
const Tensor<T>& Network<T>::forward(const Tensor<T>& batch) {
    check_batch(batch);
    Tensor<T> x = batch;
    for (auto& l : layers_) x = l->forward(x);
    logits_ = std::move(x);
    probabilities_ = softmax_rows(logits_);
    has_forward_ = true;
    return probabilities_;
}

template <typename T>
Tensor<T> Network<T>::infer_logits(const Tensor<T>& batch) const {
    check_batch(batch);
    Tensor<T> x = batch;
    for (const auto& l : layers_) x = l->infer(x);
    return x;
}

template <typename T>
Tensor<T> Network<T>::infer(const Tensor<T>& batch) const {
    return softmax_rows(infer_logits(batch));
}

template <typename T>
double Network<T>::loss(std::span<const int> labels) const {
    if (!has_forward_) throw Error("loss requested before forward");
    return softmax_cross_entropy(logits_, labels);
}

template <typename T>
Gradients<T> Network<T>::backward(std::span<const int> labels) {
    if (!has_forward_) throw Error("backward before forward");
    Tensor<T> grad = softmax_cross_entropy_gradient(logits_, labels);
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) grad = (*it)->backward(grad);
    has_forward_ = false;
    Gradients<T> out;
    for (const auto& l : layers_) {
        if (const auto* g = l->gradients()) out.push_back(*g);
    }
    return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax expects (batch,classes), got " + shape_string(logits.shape()));
    const std::size_t rows = logits.dim(0), cols = logits.dim(1);
    Tensor<T> out(logits.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* z = logits.data() + r * cols;
        T* p = out.data() + r * cols;
        const T top = *std::max_element(z, z + cols);
        double sum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) sum += std::exp(static_cast<double>(z[c] - top));
        for (std::size_t c = 0; c < cols; ++c) p[c] = static_cast<T>(std::exp(static_cast<double>(z[c] - top)) / sum);
    }
    return out;
}

namespace {

template <typename T>
void check_labels(const Tensor<T>& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || labels.size() != logits.dim(0)) {
        throw ShapeError(fmt::format("{} labels for logits {}", labels.size(), shape_string(logits.shape())));
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= logits.dim(1)) throw ShapeError(fmt::format("label {} out of range", y));
    }
}

}  // namespace

template <typename T>
double softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    check_labels(logits, labels);
    const std::size_t rows = logits.dim(0), cols = logits.dim(1);
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* z = logits.data() + r * cols;
        const double top = static_cast<double>(*std::max_element(z, z + cols));
        double sum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) sum += std::exp(static_cast<double>(z[c]) - top);
        total += top + std::log(sum) - static_cast<double>(z[labels[r]]);
    }
    return total / static_cast<double>(rows);
}

template <typename T>
Tensor<T> softmax_cross_entropy_gradient(const Tensor<T>& logits, std::span<const int> labels) {
    check_labels(logits, labels);
    Tensor<T> grad = softmax_rows(logits);
    const std::size_t rows = logits.dim(0), cols = logits.dim(1);
    const T inv = T{1} / static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        grad[r * cols + static_cast<std::size_t>(labels[r])] -= T{1};
        for (std::size_t c = 0; c < cols; ++c) grad[r * cols + c] *= inv;
    }
    return grad;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& scores) {
    if (scores.rank() != 2) throw ShapeError("argmax expects (batch,classes), got " + shape_string(scores.shape()));
    const std::size_t rows = scores.dim(0), cols = scores.dim(1);
    std::vector<int> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* s = scores.data() + r * cols;
        out[r] = static_cast<int>(std::max_element(s, s + cols) - s);
    }
    return out;
}

Tensor<float> predict_probabilities(const Network<float>& net, const Tensor<float>& images, std::size_t batch_size) {
    const std::size_t n = images.dim(0);
    const std::size_t stride = images.size() / n;
    std::vector<float> out;
    out.reserve(n * static_cast<std::size_t>(net.class_count()));
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t count = std::min(batch_size, n - start);
        Shape shape = images.shape();
        shape[0] = count;
        Tensor<float> batch(shape, std::vector<float>(images.data() + start * stride, images.data() + (start + count) * stride));
        const Tensor<float> p = net.infer(batch);
        out.insert(out.end(), p.values().begin(), p.values().end());
    }
    return Tensor<float>({n, static_cast<std::size_t>(net.class_count())}, std::move(out));
}

double accuracy(const Network<float>& net, const Dataset& data, std::size_t batch_size) {
    if (data.size() == 0) throw ShapeError("accuracy on an empty dataset");
    const auto predicted = argmax_rows(predict_probabilities(net, data.images, batch_size));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == data.labels[i];
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

template <typename T>
Network<T> build_lenet_small(std::uint64_t seed) {
    Network<T> net("lenet_small", {1, 28, 28}, 10);
    net.add_layer(std::make_unique<Convolution<T>>("conv1", 1, 20, 5, 0, 0.01));
    net.add_layer(std::make_unique<MaxPool<T>>("pool1", 2));
    net.add_layer(std::make_unique<Convolution<T>>("conv2", 20, 50, 5, 0, 0.01));
    net.add_layer(std::make_unique<MaxPool<T>>("pool2", 2));
    net.add_layer(std::make_unique<FullyConnected<T>>("fc1", 800, 500, 0.01));
    net.add_layer(std::make_unique<Relu<T>>("relu1"));
    net.add_layer(std::make_unique<FullyConnected<T>>("fc2", 500, 10, 0.01));
    net.validate();
    net.initialize(seed);
    return net;
}

template <typename T>
Network<T> build_cifar_quick(std::uint64_t seed) {
    Network<T> net("cifar_quick", {3, 32, 32}, 10);
    net.add_layer(std::make_unique<Convolution<T>>("conv1", 3, 32, 5, 2, 0.0001));
    net.add_layer(std::make_unique<MaxPool<T>>("pool1", 2));
    net.add_layer(std::make_unique<Relu<T>>("relu1"));
    net.add_layer(std::make_unique<Convolution<T>>("conv2", 32, 32, 5, 2, 0.01));
    net.add_layer(std::make_unique<Relu<T>>("relu2"));
    net.add_layer(std::make_unique<MaxPool<T>>("pool2", 2));
    net.add_layer(std::make_unique<Convolution<T>>("conv3", 32, 64, 5, 2, 0.01));
    net.add_layer(std::make_unique<Relu<T>>("relu3"));
    net.add_layer(std::make_unique<MaxPool<T>>("pool3", 2));
    net.add_layer(std::make_unique<FullyConnected<T>>("fc1", 1024, 64, 0.1));
    net.add_layer(std::make_unique<Relu<T>>("relu4"));
    net.add_layer(std::make_unique<FullyConnected<T>>("fc2", 64, 10, 0.1));
    net.validate();
    net.initialize(seed);
    return net;
}

template <typename T>
Network<T> build_topology(std::string_view name, std::uint64_t seed) {
    if (name == "lenet_small") return build_lenet_small<T>(seed);
    if (name == "cifar_quick") return build_cifar_quick<T>(seed);
    throw ConfigError(fmt::format("unknown topology '{}' (expected one of: lenet_small, cifar_quick)", name));
}

std::vector<std::string> topology_names() {
    return {"lenet_small", "cifar_quick"};
}

template <typename T>
std::string parameter_summary(const Network<T>& net) {
    std::string out = fmt::format("{:<8} {:<8} {:>16} {:>10} {:>10} {:>7}\n", "layer", "kind", "weights", "biases",
                                  "params", "share");
    const double total = static_cast<double>(net.parameter_count());
    for (std::size_t i = 0; i < net.layer_count(); ++i) {
        const auto& l = net.layer(i);
        const auto* p = l.params();
        if (!p) continue;
        out += fmt::format("{:<8} {:<8} {:>16} {:>10} {:>10} {:>6.1f}%\n", l.name(), to_string(l.kind()),
                           shape_string(p->weights.shape()), p->biases.size(), p->parameter_count(),
                           100.0 * static_cast<double>(p->parameter_count()) / total);
    }
    out += fmt::format("{:<8} {:<8} {:>16} {:>10} {:>10}\n", "total", "", "", "", net.parameter_count());
    return out;
}

template class Network<float>;
template class Network<double>;
template Tensor<float> softmax_rows(const Tensor<float>&);
template Tensor<double> softmax_rows(const Tensor<double>&);
template double softmax_cross_entropy(const Tensor<float>&, std::span<const int>);
template double softmax_cross_entropy(const Tensor<double>&, std::span<const int>);
template Tensor<float> softmax_cross_entropy_gradient(const Tensor<float>&, std::span<const int>);
template Tensor<double> softmax_cross_entropy_gradient(const Tensor<double>&, std::span<const int>);
template std::vector<int> argmax_rows(const Tensor<float>&);
template std::vector<int> argmax_rows(const Tensor<double>&);
template Network<float> build_lenet_small(std::uint64_t);
template Network<double> build_lenet_small(std::uint64_t);
template Network<float> build_cifar_quick(std::uint64_t);
template Network<double> build_cifar_quick(std::uint64_t);
template Network<float> build_topology(std::string_view, std::uint64_t);
template Network<double> build_topology(std::string_view, std::uint64_t);
template std::string parameter_summary(const Network<float>&);
template std::string parameter_summary(const Network<double>&);

}  // namespace sparsecnn
