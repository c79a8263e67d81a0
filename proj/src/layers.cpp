#include "sparsecnn/layers.hpp"

#include <Eigen/Core>
#include <fmt/format.h>

#include "sparsecnn/error.hpp"

namespace sparsecnn {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using VectorMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVectorMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

struct ConvGeometry {
    std::size_t channels, height, width, kernel, padding, out_height, out_width;

    std::size_t patch() const { return channels * kernel * kernel; }
    std::size_t positions() const { return out_height * out_width; }
};

// col has patch() rows and positions() columns.
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kernel; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                T* row = col + ((c * g.kernel + ki) * g.kernel + kj) * g.positions();
                for (std::size_t oy = 0; oy < g.out_height; ++oy) {
                    const auto y = static_cast<std::ptrdiff_t>(oy + ki) - static_cast<std::ptrdiff_t>(g.padding);
                    for (std::size_t ox = 0; ox < g.out_width; ++ox) {
                        const auto x = static_cast<std::ptrdiff_t>(ox + kj) - static_cast<std::ptrdiff_t>(g.padding);
                        const bool inside = y >= 0 && x >= 0 && y < static_cast<std::ptrdiff_t>(g.height) &&
                                            x < static_cast<std::ptrdiff_t>(g.width);
                        row[oy * g.out_width + ox] =
                            inside ? image[(c * g.height + static_cast<std::size_t>(y)) * g.width + static_cast<std::size_t>(x)]
                                   : T{0};
                    }
                }
            }
        }
    }
}

// Adds the columns back onto the image they were gathered from.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* image) {
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kernel; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                const T* row = col + ((c * g.kernel + ki) * g.kernel + kj) * g.positions();
                for (std::size_t oy = 0; oy < g.out_height; ++oy) {
                    const auto y = static_cast<std::ptrdiff_t>(oy + ki) - static_cast<std::ptrdiff_t>(g.padding);
                    if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    for (std::size_t ox = 0; ox < g.out_width; ++ox) {
                        const auto x = static_cast<std::ptrdiff_t>(ox + kj) - static_cast<std::ptrdiff_t>(g.padding);
                        if (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width)) continue;
                        image[(c * g.height + static_cast<std::size_t>(y)) * g.width + static_cast<std::size_t>(x)] +=
                            row[oy * g.out_width + ox];
                    }
                }
            }
        }
    }
}

template <typename T>
void gaussian_fill(Tensor<T>& t, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

void require_rank4(const Shape& s, const std::string& layer) {
    if (s.size() != 4) throw ShapeError(fmt::format("{}: expected (batch,c,h,w) input, got {}", layer, shape_string(s)));
}

}  // namespace

const char* to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::convolution: return "conv";
        case LayerKind::max_pool: return "maxpool";
        case LayerKind::relu: return "relu";
        case LayerKind::fully_connected: return "fc";
    }
    return "?";
}

// ---- Convolution ----

template <typename T>
Convolution<T>::Convolution(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                            std::size_t padding, double init_std)
    : Layer<T>(std::move(name)),
      in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      padding_(padding),
      init_std_(init_std) {
    params_.name = this->name();
    params_.weights = Tensor<T>({out_channels, in_channels, kernel, kernel});
    params_.biases = Tensor<T>({out_channels});
    grads_.weights = params_.weights;
    grads_.biases = params_.biases;
}

template <typename T>
Shape Convolution<T>::output_shape(const Shape& input) const {
    if (input.size() != 3 || input[0] != in_channels_) {
        throw ShapeError(fmt::format("{}: expected ({},h,w) input, got {}", this->name(), in_channels_, shape_string(input)));
    }
    if (input[1] + 2 * padding_ < kernel_ || input[2] + 2 * padding_ < kernel_) {
        throw ShapeError(fmt::format("{}: input {} smaller than kernel {}", this->name(), shape_string(input), kernel_));
    }
    return {out_channels_, input[1] + 2 * padding_ - kernel_ + 1, input[2] + 2 * padding_ - kernel_ + 1};
}

template <typename T>
Tensor<T> Convolution<T>::infer(const Tensor<T>& input) const {
    require_rank4(input.shape(), this->name());
    const Shape out_example = output_shape({input.dim(1), input.dim(2), input.dim(3)});
    const ConvGeometry g{in_channels_, input.dim(2), input.dim(3), kernel_, padding_, out_example[1], out_example[2]};
    const std::size_t batch = input.dim(0);
    Tensor<T> out({batch, out_channels_, g.out_height, g.out_width});
    AlignedVector<T> col(g.patch() * g.positions());
    ConstMatrixMap<T> w(params_.weights.data(), out_channels_, g.patch());
    ConstVectorMap<T> b(params_.biases.data(), out_channels_);
    ConstMatrixMap<T> cols(col.data(), g.patch(), g.positions());
    const std::size_t in_stride = in_channels_ * g.height * g.width;
    const std::size_t out_stride = out_channels_ * g.positions();
    for (std::size_t n = 0; n < batch; ++n) {
        im2col(input.data() + n * in_stride, g, col.data());
        MatrixMap<T> y(out.data() + n * out_stride, out_channels_, g.positions());
        y.noalias() = w * cols;
        y.colwise() += b;
    }
    return out;
}

template <typename T>
Tensor<T> Convolution<T>::forward(const Tensor<T>& input) {
    Tensor<T> out = infer(input);
    input_ = input;
    has_input_ = true;
    return out;
}

template <typename T>
Tensor<T> Convolution<T>::backward(const Tensor<T>& grad_output) {
    if (!has_input_) throw Error(this->name() + ": backward before forward");
    const Shape out_example = output_shape({input_.dim(1), input_.dim(2), input_.dim(3)});
    const ConvGeometry g{in_channels_, input_.dim(2), input_.dim(3), kernel_, padding_, out_example[1], out_example[2]};
    const std::size_t batch = input_.dim(0);
    if (grad_output.shape() != Shape{batch, out_channels_, g.out_height, g.out_width}) {
        throw ShapeError(fmt::format("{}: gradient shape {}", this->name(), shape_string(grad_output.shape())));
    }
    grads_.weights.fill(T{0});
    grads_.biases.fill(T{0});
    Tensor<T> grad_input(input_.shape());
    AlignedVector<T> col(g.patch() * g.positions());
    AlignedVector<T> dcol(col.size());
    ConstMatrixMap<T> w(params_.weights.data(), out_channels_, g.patch());
    MatrixMap<T> dw(grads_.weights.data(), out_channels_, g.patch());
    VectorMap<T> db(grads_.biases.data(), out_channels_);
    MatrixMap<T> cols(col.data(), g.patch(), g.positions());
    MatrixMap<T> dcols(dcol.data(), g.patch(), g.positions());
    const std::size_t in_stride = in_channels_ * g.height * g.width;
    const std::size_t out_stride = out_channels_ * g.positions();
    for (std::size_t n = 0; n < batch; ++n) {
        im2col(input_.data() + n * in_stride, g, col.data());
        ConstMatrixMap<T> dy(grad_output.data() + n * out_stride, out_channels_, g.positions());
        dw.noalias() += dy * cols.transpose();
        db += dy.rowwise().sum();
        dcols.noalias() = w.transpose() * dy;
        col2im(dcol.data(), g, grad_input.data() + n * in_stride);
    }
    return grad_input;
}

template <typename T>
void Convolution<T>::initialize(Rng& rng) {
    gaussian_fill(params_.weights, init_std_, rng);
    params_.biases.fill(T{0});
}

// ---- MaxPool ----

template <typename T>
MaxPool<T>::MaxPool(std::string name, std::size_t window) : Layer<T>(std::move(name)), window_(window) {
    if (window == 0) throw ShapeError("pool window must be positive");
}

template <typename T>
Shape MaxPool<T>::output_shape(const Shape& input) const {
    if (input.size() != 3 || input[1] < window_ || input[2] < window_) {
        throw ShapeError(fmt::format("{}: cannot pool {} with window {}", this->name(), shape_string(input), window_));
    }
    return {input[0], input[1] / window_, input[2] / window_};
}

template <typename T>
Tensor<T> MaxPool<T>::pool(const Tensor<T>& input, std::vector<std::size_t>* argmax) const {
    require_rank4(input.shape(), this->name());
    const Shape oe = output_shape({input.dim(1), input.dim(2), input.dim(3)});
    const std::size_t batch = input.dim(0), channels = input.dim(1), h = input.dim(2), w = input.dim(3);
    Tensor<T> out({batch, oe[0], oe[1], oe[2]});
    if (argmax) argmax->assign(out.size(), 0);
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < batch * channels; ++plane) {
        const std::size_t base = plane * h * w;
        for (std::size_t oy = 0; oy < oe[1]; ++oy) {
            for (std::size_t ox = 0; ox < oe[2]; ++ox, ++o) {
                std::size_t best = base + oy * window_ * w + ox * window_;
                for (std::size_t dy = 0; dy < window_; ++dy) {
                    for (std::size_t dx = 0; dx < window_; ++dx) {
                        const std::size_t idx = base + (oy * window_ + dy) * w + ox * window_ + dx;
                        if (input[idx] > input[best]) best = idx;
                    }
                }
                out[o] = input[best];
                if (argmax) (*argmax)[o] = best;
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> MaxPool<T>::infer(const Tensor<T>& input) const {
    return pool(input, nullptr);
}

template <typename T>
Tensor<T> MaxPool<T>::forward(const Tensor<T>& input) {
    Tensor<T> out = pool(input, &argmax_);
    input_shape_ = input.shape();
    return out;
}

template <typename T>
Tensor<T> MaxPool<T>::backward(const Tensor<T>& grad_output) {
    if (input_shape_.empty()) throw Error(this->name() + ": backward before forward");
    if (grad_output.size() != argmax_.size()) {
        throw ShapeError(fmt::format("{}: gradient shape {}", this->name(), shape_string(grad_output.shape())));
    }
    Tensor<T> grad_input(input_shape_);
    for (std::size_t o = 0; o < argmax_.size(); ++o) grad_input[argmax_[o]] += grad_output[o];
    return grad_input;
}

// ---- Relu ----

template <typename T>
Tensor<T> Relu<T>::infer(const Tensor<T>& input) const {
    Tensor<T> out = input;
    for (auto& v : out.values()) v = v > T{0} ? v : T{0};
    return out;
}

template <typename T>
Tensor<T> Relu<T>::forward(const Tensor<T>& input) {
    output_ = infer(input);
    has_output_ = true;
    return output_;
}

template <typename T>
Tensor<T> Relu<T>::backward(const Tensor<T>& grad_output) {
    if (!has_output_) throw Error(this->name() + ": backward before forward");
    if (grad_output.shape() != output_.shape()) {
        throw ShapeError(fmt::format("{}: gradient shape {}", this->name(), shape_string(grad_output.shape())));
    }
    Tensor<T> grad_input = grad_output;
    for (std::size_t i = 0; i < grad_input.size(); ++i) {
        if (!(output_[i] > T{0})) grad_input[i] = T{0};
    }
    return grad_input;
}

// ---- FullyConnected ----

template <typename T>
FullyConnected<T>::FullyConnected(std::string name, std::size_t in_features, std::size_t out_features, double init_std)
    : Layer<T>(std::move(name)), in_features_(in_features), out_features_(out_features), init_std_(init_std) {
    params_.name = this->name();
    params_.weights = Tensor<T>({out_features, in_features});
    params_.biases = Tensor<T>({out_features});
    grads_.weights = params_.weights;
    grads_.biases = params_.biases;
}

template <typename T>
Shape FullyConnected<T>::output_shape(const Shape& input) const {
    if (shape_size(input) != in_features_) {
        throw ShapeError(fmt::format("{}: expected {} input features, got {}", this->name(), in_features_,
                                     shape_string(input)));
    }
    return {out_features_};
}

template <typename T>
Tensor<T> FullyConnected<T>::infer(const Tensor<T>& input) const {
    if (input.rank() < 2 || input.size() != input.dim(0) * in_features_) {
        throw ShapeError(fmt::format("{}: expected (batch,{}) input, got {}", this->name(), in_features_,
                                     shape_string(input.shape())));
    }
    const std::size_t batch = input.dim(0);
    Tensor<T> out({batch, out_features_});
    ConstMatrixMap<T> x(input.data(), batch, in_features_);
    ConstMatrixMap<T> w(params_.weights.data(), out_features_, in_features_);
    MatrixMap<T> y(out.data(), batch, out_features_);
    y.noalias() = x * w.transpose();
    y.rowwise() += ConstVectorMap<T>(params_.biases.data(), out_features_).transpose();
    return out;
}

template <typename T>
Tensor<T> FullyConnected<T>::forward(const Tensor<T>& input) {
    Tensor<T> out = infer(input);
    input_ = input;
    has_input_ = true;
    return out;
}

template <typename T>
Tensor<T> FullyConnected<T>::backward(const Tensor<T>& grad_output) {
    if (!has_input_) throw Error(this->name() + ": backward before forward");
    const std::size_t batch = input_.dim(0);
    if (grad_output.shape() != Shape{batch, out_features_}) {
        throw ShapeError(fmt::format("{}: gradient shape {}", this->name(), shape_string(grad_output.shape())));
    }
    ConstMatrixMap<T> x(input_.data(), batch, in_features_);
    ConstMatrixMap<T> w(params_.weights.data(), out_features_, in_features_);
    ConstMatrixMap<T> dy(grad_output.data(), batch, out_features_);
    MatrixMap<T>(grads_.weights.data(), out_features_, in_features_).noalias() = dy.transpose() * x;
    VectorMap<T>(grads_.biases.data(), out_features_) = dy.colwise().sum().transpose();
    Tensor<T> grad_input(input_.shape());
    MatrixMap<T>(grad_input.data(), batch, in_features_).noalias() = dy * w;
    return grad_input;
}

template <typename T>
void FullyConnected<T>::initialize(Rng& rng) {
    gaussian_fill(params_.weights, init_std_, rng);
    params_.biases.fill(T{0});
}

template class Convolution<float>;
template class Convolution<double>;
template class MaxPool<float>;
template class MaxPool<double>;
template class Relu<float>;
template class Relu<double>;
template class FullyConnected<float>;
template class FullyConnected<double>;

}  // namespace sparsecnn
