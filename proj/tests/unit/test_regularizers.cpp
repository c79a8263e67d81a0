#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "sparsecnn/error.hpp"
#include "sparsecnn/regularizers.hpp"
#include "support.hpp"

using namespace sparsecnn;
using test_support::random_tensor;

namespace {

Tensor<double> vec(std::vector<double> v) {
    const auto n = v.size();
    return Tensor<double>({n}, std::move(v));
}

LayerParams<double> layer_of(std::vector<double> w, std::vector<double> b) {
    LayerParams<double> p;
    p.name = "l";
    p.weights = vec(std::move(w));
    p.biases = vec(std::move(b));
    return p;
}

double l1(const Tensor<double>& x) {
    double s = 0.0;
    for (double v : x.values()) s += std::abs(v);
    return s;
}

}  // namespace

TEST_SUITE("regularizers") {

TEST_CASE("l1 subgradient step") {
    CHECK(l1_subgradient_update(vec({0.5, -0.05, 0.0}), 0.1)[0] == doctest::Approx(0.4));
    CHECK(l1_subgradient_update(vec({0.5, -0.05, 0.0}), 0.1)[1] == doctest::Approx(0.05));
    CHECK(l1_subgradient_update(vec({0.5, -0.05, 0.0}), 0.1)[2] == 0.0);
    CHECK_THROWS_AS(l1_subgradient_update(vec({1.0}), -0.1), NumericError);
}

TEST_CASE("sign is a subgradient of the l1 norm") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        auto w = random_tensor<double>({9}, rng());
        if (trial % 3 == 0) w[trial % 9] = 0.0;
        const auto z = random_tensor<double>({9}, rng());
        const auto s = sign(w);
        double inner = 0.0;
        for (std::size_t i = 0; i < 9; ++i) inner += s[i] * (z[i] - w[i]);
        CHECK(l1(z) >= l1(w) + inner - 1e-12);
    }
}

TEST_CASE("shrinkage examples and properties") {
    const auto out = l1_shrinkage_update(vec({0.5, -0.1, -0.7, 0.2}), 0.2);
    CHECK(out[0] == doctest::Approx(0.3));
    CHECK(out[1] == 0.0);
    CHECK(out[2] == doctest::Approx(-0.5));
    CHECK(out[3] == 0.0);

    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto w = random_tensor<double>({30}, seed, 0.5);
        const double delta = 0.01 * static_cast<double>(seed);
        const auto s = l1_shrinkage_update(w, delta);
        for (std::size_t i = 0; i < w.size(); ++i) {
            CHECK((s[i] == 0.0 || std::signbit(s[i]) == std::signbit(w[i])));
            CHECK(std::abs(s[i]) <= std::abs(w[i]));
            CHECK((s[i] == 0.0) == (std::abs(w[i]) <= delta));
        }
    }
}

TEST_CASE("shrinkage is the l1 prox operator") {
    for (int i = 0; i < 20; ++i) {
        for (int j = 0; j < 10; ++j) {
            const double w = -2.0 + 4.0 * i / 19.0;
            const double delta = 0.05 + 0.2 * j;
            const double got = l1_shrinkage_update(vec({w}), delta)[0];
            CHECK(std::abs(got - oracle::prox_l1_scalar(w, delta)) <= 1e-10);
        }
    }
}

TEST_CASE("l0 projection examples") {
    CHECK(l0_project(vec({3, -1, 0.5, 2}), 2) == vec({3, 0, 0, 2}));
    CHECK(l0_project(vec({1, 1, 1}), 3) == vec({1, 1, 1}));
    CHECK(l0_project(vec({2, -2, 1}), 1) == vec({2, 0, 0}));
    CHECK(l0_project(vec({1, -2, 2, 2}), 2) == vec({0, -2, 2, 0}));
    CHECK(l0_project(vec({1, 2}), 5) == vec({1, 2}));
    CHECK_THROWS_AS(l0_project(vec({1, 2}), 0), ConfigError);
}

TEST_CASE("l0 projection matches support enumeration") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng() % 12;
        const std::size_t t = 1 + rng() % 6;
        std::vector<double> w(n);
        // Small integers force ties; the oracle breaks them by lowest index as well.
        for (auto& v : w) v = trial % 2 ? static_cast<double>(static_cast<int>(rng() % 7) - 3) : std::ldexp(static_cast<double>(rng() % 100000) - 5e4, -10);
        const auto got = l0_project(vec(w), t);
        const auto expected = oracle::project_l0_bruteforce(w, t);
        CHECK(std::vector<double>(got.values().begin(), got.values().end()) == expected);
        CHECK(l0_project(got, t) == got);
        CHECK(l0_count(got) <= t);
    }
}

TEST_CASE("threshold") {
    CHECK(threshold(vec({0.05, -0.2}), 0.1) == vec({0.0, -0.2}));
    const auto w = random_tensor<double>({200}, 4, 0.1);
    CHECK(threshold(w, 0.0) == w);
    std::size_t previous = w.size();
    for (int k = 0; k <= 20; ++k) {
        const auto nnz = l0_count(threshold(w, 0.005 * k));
        CHECK(nnz <= previous);
        previous = nnz;
    }
    // Agrees with projection onto the surviving count when no ties straddle delta.
    const double delta = 0.07;
    std::size_t keep = 0;
    for (double v : w.values()) keep += std::abs(v) >= delta;
    CHECK(threshold(w, delta) == l0_project(w, std::max<std::size_t>(keep, 1)));
    CHECK_THROWS_AS(threshold(w, -1.0), NumericError);
}

TEST_CASE("apply_regularization dispatch") {
    auto base = layer_of({0.5, -0.3, 0.05, 0.0}, {0.4, -0.02});

    auto none = base;
    apply_regularization(none, RegSpec::none(), 0.1, 1);
    CHECK(none.weights == base.weights);

    auto shrink = base;
    apply_regularization(shrink, RegSpec::l1_shrinkage(1.0), 0.1, 1);
    CHECK(shrink.weights[0] == doctest::Approx(0.4));
    CHECK(shrink.weights[2] == 0.0);
    CHECK(shrink.biases == base.biases);

    auto fixed = base;
    auto spec = RegSpec::l1_shrinkage(0.2);
    spec.delta_mode = DeltaMode::fixed;
    apply_regularization(fixed, spec, 0.001, 1);
    CHECK(fixed.weights[0] == doctest::Approx(0.3));

    auto sub = base;
    spec = RegSpec::l1_subgradient(1.0);
    spec.apply_to_biases = true;
    apply_regularization(sub, spec, 0.1, 1);
    CHECK(sub.weights[2] == doctest::Approx(-0.05));
    CHECK(sub.biases[1] == doctest::Approx(0.08));

    auto l0 = base;
    apply_regularization(l0, RegSpec::l0(1, 100), 0.1, 50);
    CHECK(l0.weights == base.weights);
    apply_regularization(l0, RegSpec::l0(1, 100), 0.1, 100);
    CHECK(l0_count(l0.weights) == 1);
    CHECK(l0.biases == base.biases);

    // Jointly over weights and biases the survivors are 0.5 and 0.4.
    auto joint = base;
    spec = RegSpec::l0(2, 10);
    spec.apply_to_biases = true;
    apply_regularization(joint, spec, 0.1, 10);
    CHECK(joint.weights == vec({0.5, 0, 0, 0}));
    CHECK(joint.biases == vec({0.4, 0}));
    CHECK(constraint_satisfied(joint, spec, 10));

    auto post = base;
    apply_regularization(post, RegSpec::threshold(0.1), 0.1, 100);
    CHECK(post.weights == base.weights);
    finalize_regularization(post, RegSpec::threshold(0.1), 100);
    CHECK(post.weights == vec({0.5, -0.3, 0, 0}));
}

TEST_CASE("staged caps") {
    auto spec = RegSpec::l0(100, 10);
    spec.stages = {{1000, 50}, {2000, 20}};
    CHECK(spec.cap_at(0) == 100);
    CHECK(spec.cap_at(999) == 100);
    CHECK(spec.cap_at(1000) == 50);
    CHECK(spec.cap_at(5000) == 20);
    spec.validate();
    spec.stages = {{2000, 50}, {1000, 20}};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    CHECK_THROWS_AS(RegSpec::l0(0).validate(), ConfigError);
    auto bad = RegSpec::l1_shrinkage(-1.0);
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("decay gradient and regularization value") {
    auto p = layer_of({1.0, -2.0}, {3.0});
    ParamGradients<double> g{Tensor<double>({2}, 0.0), Tensor<double>({1}, 0.0)};
    add_decay_gradient(p, RegSpec::l2(0.5), g);
    CHECK(g.weights == vec({1.0, -2.0}));
    CHECK(g.biases[0] == 0.0);
    CHECK(regularization_value(p, RegSpec::l2(0.5)) == doctest::Approx(2.5));
    CHECK(regularization_value(p, RegSpec::l1_shrinkage(0.5)) == doctest::Approx(1.5));
    CHECK(regularization_value(p, RegSpec::l0(1)) == 0.0);
}

TEST_CASE("enum names round trip") {
    for (auto k : {RegKind::none, RegKind::l2_decay, RegKind::l1_subgradient, RegKind::l1_shrinkage,
                   RegKind::l0_projection, RegKind::threshold_posthoc}) {
        CHECK(parse_reg_kind(to_string(k)) == k);
    }
    CHECK_THROWS_AS(parse_reg_kind("l1"), ConfigError);
    CHECK(parse_delta_mode("fixed") == DeltaMode::fixed);
}

}
