#include <doctest.h>

#include <atomic>
#include <cmath>
#include <sstream>

#include "sparsecnn/error.hpp"
#include "sparsecnn/protocols.hpp"
#include "support.hpp"

using namespace sparsecnn;
using namespace test_support;

namespace {

TrainConfig short_run(long iterations, std::uint64_t seed = 1) {
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.base_lr = 0.1;
    cfg.max_iterations = iterations;
    cfg.eval_interval = iterations;
    cfg.eval_examples = 0;
    cfg.seed = seed;
    return cfg;
}

struct Fixture {
    Dataset train = toy_dataset(90, 1);
    Dataset val = toy_dataset(30, 2);
    Dataset test = toy_dataset(30, 3);
    Network<float> dense = [this] {
        auto net = tiny_fc_net<float>(4);
        sparsecnn::train(net, train, short_run(80), uniform_reg_specs(net, RegSpec::l2(1e-4)));
        return net;
    }();
};

GreedyConfig greedy_config() {
    GreedyConfig gc;
    gc.finetune = short_run(10, 7);
    gc.period = 5;
    return gc;
}

}  // namespace

TEST_SUITE("protocols") {

TEST_CASE("20 percent cap arithmetic") {
    CHECK(reduced_cap(100) == 80);
    CHECK(reduced_cap(136) == 109);
    CHECK(reduced_cap(27) == 22);
    CHECK(reduced_cap(5) == 4);
    CHECK(reduced_cap(4) == 3);
    CHECK(reduced_cap(2) == 1);
    CHECK(reduced_cap(1) == 1);
}

TEST_CASE("greedy search log is monotone and feasible") {
    Fixture f;
    const auto result = greedy_sparsify(f.dense, f.train, f.val, 100, greedy_config(), &f.test);
    const auto& log = result.log;
    REQUIRE(log.size() >= 3);
    CHECK(log[0].round == 0);
    CHECK(log[0].total_cap == 163);
    CHECK(log[0].layer_reduced.empty());

    // Round 1 tries each layer once.
    CHECK(log[1].round == 1);
    CHECK(log[1].caps == std::vector<std::size_t>{109, 27});
    CHECK(log[2].caps == std::vector<std::size_t>{136, 22});

    std::size_t previous = log[0].total_cap;
    int rounds = 0;
    for (const auto& r : log) {
        CHECK(r.total_nnz <= r.total_cap);
        for (std::size_t l = 0; l < r.caps.size(); ++l) CHECK(r.nnz[l] <= r.caps[l]);
        if (r.round == 0 || !r.adopted) continue;
        ++rounds;
        CHECK(r.total_cap < previous);
        previous = r.total_cap;
    }
    // Each adopted round removes exactly one layer's 20%.
    std::vector<std::size_t> caps = log[0].caps;
    for (const auto& r : log) {
        if (r.round == 0 || !r.adopted) continue;
        std::size_t changed = 0;
        for (std::size_t l = 0; l < caps.size(); ++l) {
            if (r.caps[l] != caps[l]) {
                ++changed;
                CHECK(r.caps[l] == reduced_cap(caps[l]));
            }
        }
        CHECK(changed == 1);
        caps = r.caps;
    }
    CHECK(rounds >= 1);
    CHECK(result.plan.total() <= 100);
    CHECK(result.plan.total() == previous);
    CHECK(result.net.nonzero_count() <= result.plan.total());
    result.plan.validate(result.net);

    CHECK_THROWS_AS(greedy_sparsify(f.dense, f.train, f.val, 1, greedy_config()), ConfigError);
}

TEST_CASE("greedy search is independent of job count") {
    Fixture f;
    auto gc = greedy_config();
    const auto a = greedy_sparsify(f.dense, f.train, f.val, 130, gc);
    gc.jobs = 3;
    const auto b = greedy_sparsify(f.dense, f.train, f.val, 130, gc);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].caps == b.log[i].caps);
        CHECK(a.log[i].nnz == b.log[i].nnz);
        CHECK(a.log[i].val_acc == b.log[i].val_acc);
    }
    CHECK(a.net.params("fc1").weights == b.net.params("fc1").weights);
}

TEST_CASE("candidate log CSV round trip") {
    Fixture f;
    const auto result = greedy_sparsify(f.dense, f.train, f.val, 140, greedy_config(), &f.test);
    std::stringstream csv;
    write_candidate_log_csv(csv, result.layer_names, result.log);
    std::vector<std::string> names;
    const auto back = read_candidate_log_csv(csv, names);
    CHECK(names == result.layer_names);
    REQUIRE(back.size() == result.log.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].caps == result.log[i].caps);
        CHECK(back[i].val_acc == result.log[i].val_acc);
        CHECK(back[i].test_acc == result.log[i].test_acc);
        CHECK(back[i].adopted == result.log[i].adopted);
        CHECK(back[i].memory_bytes == result.log[i].memory_bytes);
    }
    std::stringstream junk("a,b\n1,2\n");
    CHECK_THROWS_AS(read_candidate_log_csv(junk, names), FormatError);
}

TEST_CASE("plan selection") {
    std::vector<CandidateRecord> log(3);
    log[0].total_cap = 100;
    log[0].val_acc = 0.9;
    log[1].total_cap = 60;
    log[1].val_acc = 0.8;
    log[2].total_cap = 40;
    log[2].val_acc = 0.8;
    CHECK(&select_plan(log, 100) == &log[0]);
    CHECK(&select_plan(log, 99) == &log[1]);
    CHECK(&select_plan(log, 50) == &log[2]);
    CHECK_THROWS_AS(select_plan(log, 39), ConfigError);
}

TEST_CASE("threshold comparison") {
    Fixture f;
    ThresholdConfig tc;
    tc.retrain = short_run(20, 5);
    tc.period = 5;
    const std::vector<double> deltas{0.0, 0.05, 0.1, 0.2, 0.4};
    const auto rows = threshold_compare(f.dense, deltas, f.train, f.test, tc);
    REQUIRE(rows.size() == deltas.size());
    const double dense_acc = accuracy(f.dense, f.test);
    CHECK(rows[0].acc_threshold == dense_acc);
    CHECK(rows[0].acc_retrained == dense_acc);
    CHECK(rows[0].nnz == f.dense.nonzero_count());
    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i].nnz <= rows[i - 1].nnz);
        std::size_t sum = 0;
        for (std::size_t l = 0; l < rows[i].layer_nnz.size(); ++l) {
            sum += rows[i].layer_nnz[l];
        }
        CHECK(sum == rows[i].nnz);
        CHECK(rows[i].retrained_nnz <= rows[i].nnz + rows[i].layer_nnz.size());
    }
    std::ostringstream csv;
    write_threshold_csv(csv, f.dense.parameter_layer_names(), rows);
    CHECK(csv.str().starts_with("delta,nnz,acc_threshold,acc_retrained,retrained_nnz,nnz_fc1,nnz_fc2\n"));
    CHECK_THROWS_AS(threshold_compare(f.dense, std::vector<double>{}, f.train, f.test, tc), ConfigError);
}

TEST_CASE("ensemble prediction") {
    Fixture f;
    EnsembleModel single;
    single.members.push_back(f.dense);
    CHECK(ensemble_predict(single, f.test.images) == argmax_rows(predict_probabilities(f.dense, f.test.images)));

    EnsembleModel twins;
    twins.members = {f.dense, f.dense, f.dense};
    CHECK(ensemble_predict(twins, f.test.images) == ensemble_predict(single, f.test.images));

    auto other = tiny_fc_net<float>(9);
    EnsembleModel pair;
    pair.members = {f.dense, other};
    const auto mean = ensemble_probabilities(pair, f.test.images);
    const auto pa = predict_probabilities(f.dense, f.test.images);
    const auto pb = predict_probabilities(other, f.test.images);
    for (std::size_t i = 0; i < mean.size(); ++i) CHECK(mean[i] == doctest::Approx((pa[i] + pb[i]) / 2).epsilon(1e-6));

    EnsembleModel swapped;
    swapped.members = {other, f.dense};
    CHECK(ensemble_predict(swapped, f.test.images) == ensemble_predict(pair, f.test.images));

    CHECK_THROWS_AS(ensemble_predict(EnsembleModel{}, f.test.images), ConfigError);
}

TEST_CASE("ensembles respect the budget") {
    Fixture f;
    const auto greedy = greedy_sparsify(f.dense, f.train, f.val, 50, greedy_config());
    EnsembleConfig ec;
    ec.train = short_run(30, 11);
    ec.period = 5;
    const std::size_t budget = f.dense.parameter_count();
    for (std::size_t n : {1u, 2u, 3u}) {
        const auto model = train_ensemble(n, budget, greedy.layer_names, greedy.log, f.dense, f.train, ec);
        CHECK(model.size() == n);
        CHECK(model.total_nnz() <= budget);
        for (std::size_t m = 0; m < n; ++m) {
            CHECK(model.plans[m].total() <= budget / n);
            CHECK(model.members[m].nonzero_count() <= model.plans[m].total());
        }
    }
    CHECK_THROWS_AS(train_ensemble(0, budget, greedy.layer_names, greedy.log, f.dense, f.train, ec), ConfigError);
    CHECK_THROWS_AS(train_ensemble(10, budget, greedy.layer_names, greedy.log, f.dense, f.train, ec), ConfigError);
}

TEST_CASE("data starvation sweep") {
    Fixture f;
    SweepConfig sc;
    sc.dense_train = short_run(30, 2);
    sc.sparse_train = short_run(30, 2);
    sc.dense_specs = uniform_reg_specs(f.dense, RegSpec::l2(1e-4));
    sc.sparse_specs = uniform_reg_specs(f.dense, RegSpec::l0(40, 5));
    const auto proto = tiny_fc_net<float>(6);
    const std::vector<double> fractions{0.5, 1.0};
    const auto rows = data_starvation_sweep(fractions, proto, f.train, f.test, sc);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].regime == "dense");
    CHECK(rows[1].regime == "sparse");
    CHECK(rows[0].train_size == 45);
    CHECK(rows[3].train_size == 90);
    CHECK(rows[1].nnz <= 80);
    const std::vector<double> bad{0.0};
    CHECK_THROWS_AS(data_starvation_sweep(bad, proto, f.train, f.test, sc), ConfigError);
}

TEST_CASE("parallel_for covers every index and rethrows") {
    std::vector<int> hits(50, 0);
    parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) CHECK(h == 1);
    CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) { if (i == 7) throw NumericError("boom"); }), NumericError);
}

TEST_CASE("sparsity plans") {
    const auto net = tiny_fc_net<float>(1);
    auto plan = dense_plan(net);
    CHECK(plan.total() == 163);
    plan.validate(net);
    plan.caps["fc1"] = 0;
    CHECK_THROWS_AS(plan.validate(net), ConfigError);
    plan.caps["fc1"] = 137;
    CHECK_THROWS_AS(plan.validate(net), ConfigError);
    const auto specs = plan_reg_specs(dense_plan(net), 7);
    CHECK(specs.at("fc2").kind == RegKind::l0_projection);
    CHECK(specs.at("fc2").cap == 27);
    CHECK(specs.at("fc2").period == 7);
    CHECK(specs.at("fc2").apply_to_biases);
}

}
