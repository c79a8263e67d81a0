#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "sparsecnn/layers.hpp"
#include "sparsecnn/tensor.hpp"

namespace sparsecnn {

enum class RegKind { none, l2_decay, l1_subgradient, l1_shrinkage, l0_projection, threshold_posthoc };

/// scaled: delta = lambda * current learning rate; fixed: delta = lambda.
enum class DeltaMode { scaled, fixed };

const char* to_string(RegKind kind);
const char* to_string(DeltaMode mode);
RegKind parse_reg_kind(std::string_view text);
DeltaMode parse_delta_mode(std::string_view text);

/// From `iteration` on, the l0 cap becomes `cap`.
struct CapStage {
    long iteration = 0;
    std::size_t cap = 0;

    bool operator==(const CapStage&) const = default;
};

/// Per-layer regularization. lambda weights r(W) in the objective; cap,
/// period and stages only matter for l0_projection.
struct RegSpec {
    RegKind kind = RegKind::none;
    double lambda = 0.0;
    std::size_t cap = 0;
    long period = 100;
    bool apply_to_biases = false;
    DeltaMode delta_mode = DeltaMode::scaled;
    std::vector<CapStage> stages;

    static RegSpec none() { return {}; }
    static RegSpec l2(double lambda);
    static RegSpec l1_subgradient(double lambda);
    static RegSpec l1_shrinkage(double lambda);
    static RegSpec l0(std::size_t cap, long period = 100);
    static RegSpec threshold(double delta);

    /// Throws ConfigError on an invalid combination.
    void validate() const;
    /// Cap in force at `iteration` after applying every stage that has started.
    std::size_t cap_at(long iteration) const;

    bool operator==(const RegSpec&) const = default;
};

// Element-wise operators. Zeros they produce are written as +0.

template <typename T>
void l1_subgradient_in_place(std::span<T> w, T delta);
template <typename T>
void l1_shrinkage_in_place(std::span<T> w, T delta);
/// Keeps the t largest magnitudes; equal magnitudes prefer the lower index.
template <typename T>
void l0_project_in_place(std::span<T> w, std::size_t t);
template <typename T>
void threshold_in_place(std::span<T> w, T delta);

/// W_i - delta * sign(W_i)
template <typename T>
Tensor<T> l1_subgradient_update(Tensor<T> w, double delta);
/// (|W_i| - delta)_+ * sign(W_i)
template <typename T>
Tensor<T> l1_shrinkage_update(Tensor<T> w, double delta);
/// Closest tensor (in l2) with at most t nonzeros.
template <typename T>
Tensor<T> l0_project(Tensor<T> w, std::size_t t);
/// Zeroes entries with |W_i| < delta.
template <typename T>
Tensor<T> threshold(Tensor<T> w, double delta);

/// Post-gradient update for one iteration (iterations count from 1).
template <typename T>
void apply_regularization(LayerParams<T>& layer, const RegSpec& spec, double learning_rate, long iteration);

/// End-of-training pass: a final l0 projection at the cap in force, or the
/// post-hoc threshold for threshold_posthoc. Other kinds are untouched.
template <typename T>
void finalize_regularization(LayerParams<T>& layer, const RegSpec& spec, long iteration);

/// Adds d/dW of lambda*||W||_2^2 to the gradient for l2_decay specs.
template <typename T>
void add_decay_gradient(const LayerParams<T>& layer, const RegSpec& spec, ParamGradients<T>& grad);

/// lambda * r(W) for l2 (squared norm) and the l1 kinds; 0 otherwise.
template <typename T>
double regularization_value(const LayerParams<T>& layer, const RegSpec& spec);

/// True unless an l0 spec's cap is exceeded.
template <typename T>
bool constraint_satisfied(const LayerParams<T>& layer, const RegSpec& spec, long iteration);

}  // namespace sparsecnn
