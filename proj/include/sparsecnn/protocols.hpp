#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sparsecnn/data.hpp"
#include "sparsecnn/network.hpp"
#include "sparsecnn/optimizer.hpp"

namespace sparsecnn {

/// Per-layer nonzero caps. Caps bound weights and biases of a layer jointly.
struct SparsityPlan {
    std::map<std::string, std::size_t> caps;
    std::string note;

    std::size_t total() const;
    /// Throws ConfigError unless every layer of net has a cap in [1, N].
    void validate(const Network<float>& net) const;
};

/// Caps equal to each layer's parameter count.
SparsityPlan dense_plan(const Network<float>& net);

/// l0 constraints from plan, weights and biases projected together.
RegSpecs plan_reg_specs(const SparsityPlan& plan, long period);

/// The next greedy cap: ceil(0.8 t), but at least one below t. t = 1 stays 1.
std::size_t reduced_cap(std::size_t t);

/// Runs fn(0..count-1) on at most `jobs` threads; rethrows the first failure.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn);

// ---- greedy layer-wise search ----

struct GreedyConfig {
    /// Fine-tuning run for every candidate.
    TrainConfig finetune;
    long period = 100;
    std::size_t jobs = 1;
};

struct CandidateRecord {
    int round = 0;
    /// Empty for the round-0 starting network.
    std::string layer_reduced;
    std::vector<std::size_t> caps;
    std::vector<std::size_t> nnz;
    std::size_t total_cap = 0;
    std::size_t total_nnz = 0;
    double val_acc = 0.0;
    /// NaN without a test set.
    double test_acc = 0.0;
    std::uint64_t memory_bytes = 0;
    bool adopted = false;
};

struct GreedyResult {
    Network<float> net;
    SparsityPlan plan;
    std::vector<std::string> layer_names;
    std::vector<CandidateRecord> log;
};

/// Starts from base (normally a trained dense net) and tightens one layer per
/// round until the plan total is at most target_nnz. Throws ConfigError when
/// target_nnz is below one nonzero per layer.
GreedyResult greedy_sparsify(const Network<float>& base, const Dataset& train, const Dataset& val,
                             std::size_t target_nnz, const GreedyConfig& cfg, const Dataset* test = nullptr);

/// round,layer_reduced,adopted,cap_<layer>...,nnz_<layer>...,total_cap,total_nnz,val_acc,test_acc,memory_bytes
void write_candidate_log_csv(std::ostream& out, const std::vector<std::string>& layer_names,
                             std::span<const CandidateRecord> log);

/// Reads what write_candidate_log_csv wrote; fills layer_names from the header.
std::vector<CandidateRecord> read_candidate_log_csv(std::istream& in, std::vector<std::string>& layer_names);

/// Highest val_acc among records with total_cap <= cap; ties go to the earlier record.
const CandidateRecord& select_plan(std::span<const CandidateRecord> log, std::size_t cap);
SparsityPlan plan_from_record(const std::vector<std::string>& layer_names, const CandidateRecord& record);

// ---- thresholding versus l0 retraining ----

struct ThresholdConfig {
    TrainConfig retrain;
    long period = 100;
    std::size_t jobs = 1;
};

struct ThresholdRow {
    double delta = 0.0;
    std::vector<std::size_t> layer_nnz;
    std::size_t nnz = 0;
    double acc_threshold = 0.0;
    double acc_retrained = 0.0;
    std::size_t retrained_nnz = 0;
};

/// For each delta: threshold dense_net, then retrain from the dense weights
/// under the thresholded net's per-layer nnz. When delta removes nothing the
/// retrained branch is the dense net itself.
std::vector<ThresholdRow> threshold_compare(const Network<float>& dense_net, std::span<const double> deltas,
                                            const Dataset& train, const Dataset& test, const ThresholdConfig& cfg);

/// delta,nnz,acc_threshold,acc_retrained,retrained_nnz,nnz_<layer>...
void write_threshold_csv(std::ostream& out, const std::vector<std::string>& layer_names,
                         std::span<const ThresholdRow> rows);

// ---- bagged ensembles under a parameter budget ----

struct EnsembleModel {
    std::vector<Network<float>> members;
    std::vector<SparsityPlan> plans;
    std::size_t budget = 0;

    std::size_t size() const { return members.size(); }
    std::size_t total_nnz() const;
};

struct EnsembleConfig {
    TrainConfig train;
    long period = 100;
    std::size_t jobs = 1;
};

/// Members are trained from fresh initializations of prototype's topology,
/// member i on bag i of data (n = 1 uses data as is), each under the best
/// logged plan with total cap <= budget / n.
EnsembleModel train_ensemble(std::size_t n, std::size_t budget, const std::vector<std::string>& layer_names,
                             std::span<const CandidateRecord> plan_log, const Network<float>& prototype,
                             const Dataset& data, const EnsembleConfig& cfg);

/// Mean of member probabilities.
Tensor<float> ensemble_probabilities(const EnsembleModel& model, const Tensor<float>& images);
/// Argmax of the mean; ties to the lowest class.
std::vector<int> ensemble_predict(const EnsembleModel& model, const Tensor<float>& images);
double ensemble_accuracy(const EnsembleModel& model, const Dataset& data);

// ---- reduced training data ----

struct SweepConfig {
    TrainConfig dense_train;
    RegSpecs dense_specs;
    TrainConfig sparse_train;
    RegSpecs sparse_specs;
    std::uint64_t seed = 1;
    std::size_t jobs = 1;
};

struct SweepRow {
    double fraction = 0.0;
    std::string regime;
    std::size_t train_size = 0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    std::size_t nnz = 0;
};

/// Trains a copy of prototype under both regimes on a seeded subsample for each fraction.
std::vector<SweepRow> data_starvation_sweep(std::span<const double> fractions, const Network<float>& prototype,
                                            const Dataset& train, const Dataset& test, const SweepConfig& cfg);

/// fraction,regime,train_size,train_acc,test_acc,nnz
void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows);

}  // namespace sparsecnn
