#include "sparsecnn/regularizers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "sparsecnn/error.hpp"

namespace sparsecnn {

const char* to_string(RegKind kind) {
    switch (kind) {
        case RegKind::none: return "none";
        case RegKind::l2_decay: return "l2_decay";
        case RegKind::l1_subgradient: return "l1_subgradient";
        case RegKind::l1_shrinkage: return "l1_shrinkage";
        case RegKind::l0_projection: return "l0_projection";
        case RegKind::threshold_posthoc: return "threshold_posthoc";
    }
    return "unknown";
}

const char* to_string(DeltaMode mode) {
    return mode == DeltaMode::fixed ? "fixed" : "scaled";
}

RegKind parse_reg_kind(std::string_view text) {
    for (auto k : {RegKind::none, RegKind::l2_decay, RegKind::l1_subgradient, RegKind::l1_shrinkage,
                   RegKind::l0_projection, RegKind::threshold_posthoc}) {
        if (text == to_string(k)) return k;
    }
    throw ConfigError(fmt::format("unknown regularizer kind '{}'", text));
}

DeltaMode parse_delta_mode(std::string_view text) {
    if (text == "scaled") return DeltaMode::scaled;
    if (text == "fixed") return DeltaMode::fixed;
    throw ConfigError(fmt::format("unknown delta mode '{}' (expected scaled or fixed)", text));
}

RegSpec RegSpec::l2(double lambda) {
    RegSpec s;
    s.kind = RegKind::l2_decay;
    s.lambda = lambda;
    return s;
}

RegSpec RegSpec::l1_subgradient(double lambda) {
    RegSpec s;
    s.kind = RegKind::l1_subgradient;
    s.lambda = lambda;
    return s;
}

RegSpec RegSpec::l1_shrinkage(double lambda) {
    RegSpec s;
    s.kind = RegKind::l1_shrinkage;
    s.lambda = lambda;
    return s;
}

RegSpec RegSpec::l0(std::size_t cap, long period) {
    RegSpec s;
    s.kind = RegKind::l0_projection;
    s.cap = cap;
    s.period = period;
    return s;
}

RegSpec RegSpec::threshold(double delta) {
    RegSpec s;
    s.kind = RegKind::threshold_posthoc;
    s.lambda = delta;
    return s;
}

void RegSpec::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError(fmt::format("lambda must be >= 0, got {}", lambda));
    switch (kind) {
        case RegKind::none:
        case RegKind::l2_decay:
        case RegKind::l1_subgradient:
        case RegKind::l1_shrinkage:
        case RegKind::threshold_posthoc:
            return;
        case RegKind::l0_projection:
            if (cap < 1) throw ConfigError("l0_projection requires t >= 1");
            if (period < 1) throw ConfigError("l0_projection requires period >= 1");
            for (std::size_t i = 0; i < stages.size(); ++i) {
                if (stages[i].cap < 1) throw ConfigError("l0 stage caps must be >= 1");
                if (stages[i].iteration < 0) throw ConfigError("l0 stage iterations must be >= 0");
                if (i > 0 && stages[i].iteration <= stages[i - 1].iteration) {
                    throw ConfigError("l0 stages must have increasing iterations");
                }
            }
            return;
    }
    throw ConfigError(fmt::format("unknown regularizer kind {}", static_cast<int>(kind)));
}

std::size_t RegSpec::cap_at(long iteration) const {
    std::size_t t = cap;
    for (const auto& s : stages) {
        if (iteration >= s.iteration) t = s.cap;
    }
    return t;
}

template <typename T>
void l1_subgradient_in_place(std::span<T> w, T delta) {
    for (auto& v : w) v -= delta * sign(v);
}

template <typename T>
void l1_shrinkage_in_place(std::span<T> w, T delta) {
    for (auto& v : w) {
        const T magnitude = std::abs(v) - delta;
        v = magnitude > T{0} ? std::copysign(magnitude, v) : T{0};
    }
}

template <typename T>
void l0_project_in_place(std::span<T> w, std::size_t t) {
    if (t >= w.size()) return;
    std::vector<std::size_t> order(w.size());
    std::iota(order.begin(), order.end(), 0);
    auto before = [&w](std::size_t a, std::size_t b) {
        const T ma = std::abs(w[a]), mb = std::abs(w[b]);
        return ma > mb || (ma == mb && a < b);
    };
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(t), order.end(), before);
    for (auto it = order.begin() + static_cast<std::ptrdiff_t>(t); it != order.end(); ++it) w[*it] = T{0};
}

template <typename T>
void threshold_in_place(std::span<T> w, T delta) {
    for (auto& v : w) {
        if (std::abs(v) < delta) v = T{0};
    }
}

namespace {

void check_delta(double delta, const char* op) {
    if (!(delta >= 0.0) || !std::isfinite(delta)) throw NumericError(fmt::format("{}: delta must be >= 0, got {}", op, delta));
}

// Runs op over the weights, or over weights and biases as one vector.
template <typename T, typename Op>
void for_layer_values(LayerParams<T>& layer, bool with_biases, Op op) {
    if (!with_biases) {
        op(layer.weights.values());
        return;
    }
    std::vector<T> joined(layer.weights.values().begin(), layer.weights.values().end());
    joined.insert(joined.end(), layer.biases.values().begin(), layer.biases.values().end());
    op(std::span<T>(joined));
    std::copy_n(joined.begin(), layer.weights.size(), layer.weights.data());
    std::copy(joined.begin() + static_cast<std::ptrdiff_t>(layer.weights.size()), joined.end(), layer.biases.data());
}

}  // namespace

template <typename T>
Tensor<T> l1_subgradient_update(Tensor<T> w, double delta) {
    check_delta(delta, "l1_subgradient_update");
    l1_subgradient_in_place(w.values(), static_cast<T>(delta));
    return w;
}

template <typename T>
Tensor<T> l1_shrinkage_update(Tensor<T> w, double delta) {
    check_delta(delta, "l1_shrinkage_update");
    l1_shrinkage_in_place(w.values(), static_cast<T>(delta));
    return w;
}

template <typename T>
Tensor<T> l0_project(Tensor<T> w, std::size_t t) {
    if (t < 1) throw ConfigError("l0_project requires t >= 1");
    l0_project_in_place(w.values(), t);
    return w;
}

template <typename T>
Tensor<T> threshold(Tensor<T> w, double delta) {
    check_delta(delta, "threshold");
    threshold_in_place(w.values(), static_cast<T>(delta));
    return w;
}

template <typename T>
void apply_regularization(LayerParams<T>& layer, const RegSpec& spec, double learning_rate, long iteration) {
    switch (spec.kind) {
        case RegKind::none:
        case RegKind::l2_decay:
        case RegKind::threshold_posthoc:
            return;
        case RegKind::l1_subgradient:
        case RegKind::l1_shrinkage: {
            const double delta = spec.delta_mode == DeltaMode::scaled ? spec.lambda * learning_rate : spec.lambda;
            check_delta(delta, to_string(spec.kind));
            if (delta == 0.0) return;
            const T d = static_cast<T>(delta);
            if (spec.kind == RegKind::l1_subgradient) {
                for_layer_values(layer, spec.apply_to_biases, [d](std::span<T> v) { l1_subgradient_in_place(v, d); });
            } else {
                for_layer_values(layer, spec.apply_to_biases, [d](std::span<T> v) { l1_shrinkage_in_place(v, d); });
            }
            return;
        }
        case RegKind::l0_projection: {
            if (spec.period < 1) throw ConfigError("l0_projection requires period >= 1");
            if (iteration % spec.period != 0) return;
            const std::size_t t = spec.cap_at(iteration);
            for_layer_values(layer, spec.apply_to_biases, [t](std::span<T> v) { l0_project_in_place(v, t); });
            return;
        }
    }
    throw ConfigError(fmt::format("unknown regularizer kind {}", static_cast<int>(spec.kind)));
}

template <typename T>
void finalize_regularization(LayerParams<T>& layer, const RegSpec& spec, long iteration) {
    if (spec.kind == RegKind::l0_projection) {
        const std::size_t t = spec.cap_at(iteration);
        for_layer_values(layer, spec.apply_to_biases, [t](std::span<T> v) { l0_project_in_place(v, t); });
    } else if (spec.kind == RegKind::threshold_posthoc) {
        const T d = static_cast<T>(spec.lambda);
        for_layer_values(layer, spec.apply_to_biases, [d](std::span<T> v) { threshold_in_place(v, d); });
    }
}

template <typename T>
void add_decay_gradient(const LayerParams<T>& layer, const RegSpec& spec, ParamGradients<T>& grad) {
    if (spec.kind != RegKind::l2_decay || spec.lambda == 0.0) return;
    const T factor = static_cast<T>(2.0 * spec.lambda);
    for (std::size_t i = 0; i < layer.weights.size(); ++i) grad.weights[i] += factor * layer.weights[i];
    if (spec.apply_to_biases) {
        for (std::size_t i = 0; i < layer.biases.size(); ++i) grad.biases[i] += factor * layer.biases[i];
    }
}

template <typename T>
double regularization_value(const LayerParams<T>& layer, const RegSpec& spec) {
    auto accumulate = [&](auto term) {
        double s = 0.0;
        for (T v : layer.weights.values()) s += term(static_cast<double>(v));
        if (spec.apply_to_biases) {
            for (T v : layer.biases.values()) s += term(static_cast<double>(v));
        }
        return s;
    };
    switch (spec.kind) {
        case RegKind::l2_decay:
            return spec.lambda * accumulate([](double v) { return v * v; });
        case RegKind::l1_subgradient:
        case RegKind::l1_shrinkage:
            return spec.lambda * accumulate([](double v) { return std::abs(v); });
        default:
            return 0.0;
    }
}

template <typename T>
bool constraint_satisfied(const LayerParams<T>& layer, const RegSpec& spec, long iteration) {
    if (spec.kind != RegKind::l0_projection) return true;
    std::size_t nnz = l0_count(layer.weights);
    if (spec.apply_to_biases) nnz += l0_count(layer.biases);
    return nnz <= spec.cap_at(iteration);
}

#define SPARSECNN_INSTANTIATE(T)                                                              \
    template void l1_subgradient_in_place<T>(std::span<T>, T);                                \
    template void l1_shrinkage_in_place<T>(std::span<T>, T);                                  \
    template void l0_project_in_place<T>(std::span<T>, std::size_t);                          \
    template void threshold_in_place<T>(std::span<T>, T);                                     \
    template Tensor<T> l1_subgradient_update<T>(Tensor<T>, double);                           \
    template Tensor<T> l1_shrinkage_update<T>(Tensor<T>, double);                             \
    template Tensor<T> l0_project<T>(Tensor<T>, std::size_t);                                 \
    template Tensor<T> threshold<T>(Tensor<T>, double);                                       \
    template void apply_regularization<T>(LayerParams<T>&, const RegSpec&, double, long);     \
    template void finalize_regularization<T>(LayerParams<T>&, const RegSpec&, long);          \
    template void add_decay_gradient<T>(const LayerParams<T>&, const RegSpec&, ParamGradients<T>&); \
    template double regularization_value<T>(const LayerParams<T>&, const RegSpec&);           \
    template bool constraint_satisfied<T>(const LayerParams<T>&, const RegSpec&, long);

SPARSECNN_INSTANTIATE(float)
SPARSECNN_INSTANTIATE(double)

#undef SPARSECNN_INSTANTIATE

}  // namespace sparsecnn
