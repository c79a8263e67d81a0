#include "sparsecnn/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "sparsecnn/error.hpp"
#include "sparsecnn/rng.hpp"

namespace sparsecnn {

template <typename T>
RegSpecs uniform_reg_specs(const Network<T>& net, const RegSpec& spec) {
    RegSpecs specs;
    for (const auto& name : net.parameter_layer_names()) specs[name] = spec;
    return specs;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError(fmt::format("base_lr must be > 0, got {}", base_lr));
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError(fmt::format("momentum must be in [0,1), got {}", momentum));
    if (!(lr_gamma > 0.0)) throw ConfigError("lr_gamma must be > 0");
    if (lr_step < 0) throw ConfigError("lr_step must be >= 0");
    if (max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
    if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
}

double TrainConfig::learning_rate(long iteration) const {
    if (lr_step <= 0) return base_lr;
    const long completed_steps = std::max(0L, iteration - 1) / lr_step;
    return base_lr * std::pow(lr_gamma, static_cast<double>(completed_steps));
}

template <typename T>
void momentum_update(std::span<T> weights, std::span<const T> grad, std::span<T> velocity, T lr, T momentum) {
    for (std::size_t i = 0; i < weights.size(); ++i) {
        velocity[i] = momentum * velocity[i] - lr * grad[i];
        weights[i] += velocity[i];
    }
}

namespace {

const RegSpec& spec_for(const RegSpecs& specs, const std::string& layer) {
    const auto it = specs.find(layer);
    if (it == specs.end()) throw ConfigError("no regularization spec for layer " + layer);
    return it->second;
}

}  // namespace

template <typename T>
double sgd_step(Network<T>& net, const Tensor<T>& batch, std::span<const int> labels, const TrainConfig& cfg,
                const RegSpecs& specs, SgdState<T>& state) {
    net.forward(batch);
    const double loss = net.loss(labels);
    Gradients<T> grads = net.backward(labels);
    auto layers = net.parameter_layers();
    if (state.velocity.empty()) {
        for (const auto& g : grads) state.velocity.push_back({Tensor<T>(g.weights.shape()), Tensor<T>(g.biases.shape())});
    }
    const long iteration = ++state.iteration;
    const double lr = cfg.learning_rate(iteration);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const RegSpec& spec = spec_for(specs, layers[i]->name);
        add_decay_gradient(*layers[i], spec, grads[i]);
        if (!all_finite(std::span<const T>(grads[i].weights.values())) ||
            !all_finite(std::span<const T>(grads[i].biases.values()))) {
            throw NumericError(fmt::format("non-finite gradient in layer {} at iteration {} (loss {})", layers[i]->name,
                                           iteration, loss));
        }
        momentum_update(layers[i]->weights.values(), std::span<const T>(grads[i].weights.values()),
                        state.velocity[i].weights.values(), static_cast<T>(lr), static_cast<T>(cfg.momentum));
        momentum_update(layers[i]->biases.values(), std::span<const T>(grads[i].biases.values()),
                        state.velocity[i].biases.values(), static_cast<T>(lr), static_cast<T>(cfg.momentum));
    }
    for (auto* layer : layers) apply_regularization(*layer, spec_for(specs, layer->name), lr, iteration);
    return loss;
}

Metrics train(Network<float>& net, const Dataset& train_set, const TrainConfig& cfg, const RegSpecs& specs,
              const Dataset* test_set) {
    cfg.validate();
    const auto names = net.parameter_layer_names();
    for (const auto& name : names) spec_for(specs, name).validate();
    if (train_set.size() < cfg.batch_size) {
        throw ConfigError(fmt::format("training set of {} records is smaller than batch size {}", train_set.size(),
                                      cfg.batch_size));
    }
    const Dataset eval_set = take_first(train_set, cfg.eval_examples);

    Rng rng(derive_seed(cfg.seed, "batches"));
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t cursor = 0;

    Metrics metrics;
    metrics.layer_names = names;
    SgdState<float> state;
    double loss_sum = 0.0;
    long loss_count = 0;
    for (long it = 1; it <= cfg.max_iterations; ++it) {
        if (cursor + cfg.batch_size > order.size()) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        const std::span<const std::size_t> idx(order.data() + cursor, cfg.batch_size);
        cursor += cfg.batch_size;
        const Tensor<float> batch = train_set.batch_images(idx);
        const std::vector<int> labels = train_set.batch_labels(idx);
        loss_sum += sgd_step(net, batch, labels, cfg, specs, state);
        ++loss_count;

        const bool last = it == cfg.max_iterations;
        if (last) {
            for (auto* layer : net.parameter_layers()) finalize_regularization(*layer, spec_for(specs, layer->name), it);
        }
        if (last || it % cfg.eval_interval == 0) {
            MetricsRow row;
            row.iteration = it;
            row.loss = loss_sum / static_cast<double>(loss_count);
            row.train_acc = accuracy(net, eval_set);
            row.test_acc = test_set ? accuracy(net, *test_set) : std::numeric_limits<double>::quiet_NaN();
            for (const auto* layer : net.parameter_layers()) {
                const RegSpec& spec = spec_for(specs, layer->name);
                row.reg_term += regularization_value(*layer, spec);
                row.nnz.push_back(layer->nonzero_count());
                row.l0_feasible = row.l0_feasible && constraint_satisfied(*layer, spec, it);
            }
            metrics.rows.push_back(std::move(row));
            loss_sum = 0.0;
            loss_count = 0;
        }
    }
    return metrics;
}

template <typename T>
Gradients<T> full_gradient(Network<T>& net, const Tensor<T>& images, std::span<const int> labels, std::size_t chunk) {
    const std::size_t n = images.dim(0);
    if (n == 0 || labels.size() != n) throw ShapeError("full_gradient: images and labels disagree");
    const std::size_t stride = images.size() / n;
    Gradients<T> total;
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t count = std::min(chunk, n - start);
        Shape shape = images.shape();
        shape[0] = count;
        Tensor<T> batch(shape, std::vector<T>(images.data() + start * stride, images.data() + (start + count) * stride));
        net.forward(batch);
        Gradients<T> g = net.backward(labels.subspan(start, count));
        const T weight = static_cast<T>(count) / static_cast<T>(n);
        if (total.empty()) {
            for (const auto& p : g) total.push_back({Tensor<T>(p.weights.shape()), Tensor<T>(p.biases.shape())});
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            for (std::size_t k = 0; k < g[i].weights.size(); ++k) total[i].weights[k] += weight * g[i].weights[k];
            for (std::size_t k = 0; k < g[i].biases.size(); ++k) total[i].biases[k] += weight * g[i].biases[k];
        }
    }
    return total;
}

void write_metrics_csv(std::ostream& out, const Metrics& metrics) {
    out << "iteration,loss,reg_term,train_acc,test_acc";
    for (const auto& name : metrics.layer_names) out << ",nnz_" << name;
    out << '\n';
    for (const auto& row : metrics.rows) {
        fmt::print(out, "{},{},{},{},", row.iteration, row.loss, row.reg_term, row.train_acc);
        if (!std::isnan(row.test_acc)) fmt::print(out, "{}", row.test_acc);
        for (auto n : row.nnz) out << ',' << n;
        out << '\n';
    }
}

template RegSpecs uniform_reg_specs(const Network<float>&, const RegSpec&);
template RegSpecs uniform_reg_specs(const Network<double>&, const RegSpec&);
template void momentum_update(std::span<float>, std::span<const float>, std::span<float>, float, float);
template void momentum_update(std::span<double>, std::span<const double>, std::span<double>, double, double);
template double sgd_step(Network<float>&, const Tensor<float>&, std::span<const int>, const TrainConfig&,
                         const RegSpecs&, SgdState<float>&);
template double sgd_step(Network<double>&, const Tensor<double>&, std::span<const int>, const TrainConfig&,
                         const RegSpecs&, SgdState<double>&);
template Gradients<float> full_gradient(Network<float>&, const Tensor<float>&, std::span<const int>, std::size_t);
template Gradients<double> full_gradient(Network<double>&, const Tensor<double>&, std::span<const int>, std::size_t);

}  // namespace sparsecnn
