#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace sparsecnn {

using Shape = std::vector<std::size_t>;

/// Cache-line aligned storage. Vectorized kernels pick their peeling from the
/// buffer address, so a fixed alignment keeps results independent of where the
/// heap happens to place a tensor.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major n-dimensional array. T is float for training and double
/// for the gradient-check and oracle paths.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{0});
    Tensor(Shape shape, std::vector<T> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    std::span<T> values() { return values_; }
    std::span<const T> values() const { return values_; }
    T* data() { return values_.data(); }
    const T* data() const { return values_.data(); }

    T& operator[](std::size_t i) { return values_[i]; }
    const T& operator[](std::size_t i) const { return values_[i]; }

    /// Reinterprets the extents; the element count must not change.
    void reshape(Shape shape);
    void fill(T value);

    template <typename U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, std::vector<U>(values_.begin(), values_.end()));
    }

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    AlignedVector<T> values_;
};

/// (sum_i |x_i|^p)^(1/p) for p > 0, accumulated in double with max-scaling.
template <typename T>
double lp_norm(const Tensor<T>& x, double p);

/// Number of elements with |x_i| > eps.
template <typename T>
std::size_t l0_count(std::span<const T> x, double eps = 0.0);
template <typename T>
std::size_t l0_count(const Tensor<T>& x, double eps = 0.0) {
    return l0_count(x.values(), eps);
}

template <typename T>
double linf_norm(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b);

/// sign(0) == 0, so exact zeros are a fixed point of the l1 updates.
template <typename T>
constexpr T sign(T v) {
    return v > T{0} ? T{1} : (v < T{0} ? T{-1} : T{0});
}
template <typename T>
Tensor<T> sign(const Tensor<T>& x);

template <typename T>
bool all_finite(std::span<const T> x);

}  // namespace sparsecnn
