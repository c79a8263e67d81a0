#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sparsecnn/data.hpp"
#include "sparsecnn/network.hpp"
#include "sparsecnn/regularizers.hpp"

namespace sparsecnn {

/// Layer name -> regularization. train() requires an entry for every
/// parameterized layer.
using RegSpecs = std::map<std::string, RegSpec>;

/// Same spec for every parameterized layer of net.
template <typename T>
RegSpecs uniform_reg_specs(const Network<T>& net, const RegSpec& spec);

struct TrainConfig {
    std::size_t batch_size = 64;
    double base_lr = 0.01;
    /// Step decay: lr = base_lr * lr_gamma^floor((iteration-1) / lr_step); lr_step 0 disables decay.
    double lr_gamma = 0.1;
    long lr_step = 0;
    double momentum = 0.9;
    long max_iterations = 1000;
    std::uint64_t seed = 1;
    /// Metrics are recorded every eval_interval iterations and after the last one.
    long eval_interval = 100;
    /// Training accuracy is measured on the first eval_examples records (0 = all).
    std::size_t eval_examples = 1000;

    void validate() const;
    double learning_rate(long iteration) const;

    bool operator==(const TrainConfig&) const = default;
};

struct MetricsRow {
    long iteration = 0;
    /// Mean minibatch data loss since the previous row.
    double loss = 0.0;
    /// Sum over layers of lambda * r(W).
    double reg_term = 0.0;
    double train_acc = 0.0;
    /// NaN when no test set was supplied.
    double test_acc = 0.0;
    std::vector<std::size_t> nnz;
    bool l0_feasible = true;
};

struct Metrics {
    std::vector<std::string> layer_names;
    std::vector<MetricsRow> rows;
};

/// Momentum buffers plus the count of completed iterations.
template <typename T>
struct SgdState {
    Gradients<T> velocity;
    long iteration = 0;
};

/// v <- momentum*v - lr*grad; w <- w + v.
template <typename T>
void momentum_update(std::span<T> weights, std::span<const T> grad, std::span<T> velocity, T lr, T momentum);

/// One iteration on (batch, labels): gradient step with l2 decay folded into
/// the gradient, then each layer's regularization update. Returns the batch
/// data loss. Throws NumericError on a non-finite gradient.
template <typename T>
double sgd_step(Network<T>& net, const Tensor<T>& batch, std::span<const int> labels, const TrainConfig& cfg,
                const RegSpecs& specs, SgdState<T>& state);

/// Runs cfg.max_iterations steps over shuffled epochs (without replacement),
/// then applies each layer's end-of-training pass. Mutates net.
Metrics train(Network<float>& net, const Dataset& train_set, const TrainConfig& cfg, const RegSpecs& specs,
              const Dataset* test_set = nullptr);

/// Exact gradient of the mean data loss over every record, evaluated in chunks.
template <typename T>
Gradients<T> full_gradient(Network<T>& net, const Tensor<T>& images, std::span<const int> labels,
                           std::size_t chunk = 256);

/// iteration,loss,reg_term,train_acc,test_acc,nnz_<layer>...
void write_metrics_csv(std::ostream& out, const Metrics& metrics);

}  // namespace sparsecnn
