#include "sparsecnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "sparsecnn/error.hpp"

namespace sparsecnn {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    return fmt::format("({})", fmt::join(shape, ","));
}

namespace {

void check_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) {
        throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op, shape_string(a), shape_string(b)));
    }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), values_(shape_size(shape_), fill) {
    for (auto extent : shape_) {
        if (extent == 0) throw ShapeError("tensor extents must be positive: " + shape_string(shape_));
    }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(values.begin(), values.end()) {
    if (shape_size(shape_) != values_.size()) {
        throw ShapeError(fmt::format("shape {} needs {} elements, got {}", shape_string(shape_),
                                     shape_size(shape_), values_.size()));
    }
}

template <typename T>
void Tensor<T>::reshape(Shape shape) {
    if (shape_size(shape) != values_.size()) {
        throw ShapeError(fmt::format("cannot reshape {} to {}", shape_string(shape_), shape_string(shape)));
    }
    shape_ = std::move(shape);
}

template <typename T>
void Tensor<T>::fill(T value) {
    std::fill(values_.begin(), values_.end(), value);
}

template <typename T>
bool all_finite(std::span<const T> x) {
    return std::all_of(x.begin(), x.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
double lp_norm(const Tensor<T>& x, double p) {
    if (!(p > 0.0)) throw NumericError(fmt::format("lp_norm: p must be positive, got {}", p));
    if (!all_finite(x.values())) throw NumericError("lp_norm: non-finite element");
    double largest = 0.0;
    for (T v : x.values()) largest = std::max(largest, std::abs(static_cast<double>(v)));
    if (largest == 0.0) return 0.0;
    double sum = 0.0;
    for (T v : x.values()) {
        const double a = std::abs(static_cast<double>(v));
        if (a > 0.0) sum += std::pow(a / largest, p);
    }
    return largest * std::pow(sum, 1.0 / p);
}

template <typename T>
std::size_t l0_count(std::span<const T> x, double eps) {
    return static_cast<std::size_t>(
        std::count_if(x.begin(), x.end(), [eps](T v) { return std::abs(static_cast<double>(v)) > eps; }));
}

template <typename T>
double linf_norm(const Tensor<T>& x) {
    if (x.empty()) throw ShapeError("linf_norm of an empty tensor");
    double largest = 0.0;
    for (T v : x.values()) largest = std::max(largest, std::abs(static_cast<double>(v)));
    return largest;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a.shape(), b.shape(), "add");
    Tensor<T> out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    Tensor<T> out = x;
    for (auto& v : out.values()) v *= factor;
    return out;
}

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a.shape(), b.shape(), "hadamard");
    Tensor<T> out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

template <typename T>
Tensor<T> sign(const Tensor<T>& x) {
    Tensor<T> out = x;
    for (auto& v : out.values()) v = sign(v);
    return out;
}

#define SPARSECNN_INSTANTIATE(T)                                      \
    template class Tensor<T>;                                         \
    template bool all_finite<T>(std::span<const T>);                  \
    template double lp_norm<T>(const Tensor<T>&, double);             \
    template std::size_t l0_count<T>(std::span<const T>, double);     \
    template double linf_norm<T>(const Tensor<T>&);                   \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);    \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                 \
    template Tensor<T> hadamard<T>(const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> sign<T>(const Tensor<T>&);

SPARSECNN_INSTANTIATE(float)
SPARSECNN_INSTANTIATE(double)

#undef SPARSECNN_INSTANTIATE

}  // namespace sparsecnn
