#include <doctest.h>

#include <algorithm>
#include <set>

#include "sparsecnn/data.hpp"
#include "sparsecnn/error.hpp"
#include "support.hpp"

using namespace sparsecnn;
using namespace test_support;

namespace {

std::vector<unsigned char> idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols) {
    std::vector<unsigned char> b;
    put_be32(b, 0x803);
    put_be32(b, n);
    put_be32(b, rows);
    put_be32(b, cols);
    for (std::uint32_t i = 0; i < n * rows * cols; ++i) b.push_back(static_cast<unsigned char>(i % 256));
    return b;
}

std::vector<unsigned char> idx_labels(std::uint32_t n) {
    std::vector<unsigned char> b;
    put_be32(b, 0x801);
    put_be32(b, n);
    for (std::uint32_t i = 0; i < n; ++i) b.push_back(static_cast<unsigned char>(i % 10));
    return b;
}

std::vector<unsigned char> cifar_records(std::size_t n) {
    std::vector<unsigned char> b;
    for (std::size_t r = 0; r < n; ++r) {
        b.push_back(static_cast<unsigned char>(r % 10));
        for (std::size_t p = 0; p < 3072; ++p) b.push_back(static_cast<unsigned char>((p + r) % 256));
    }
    return b;
}

bool same_record(const Dataset& a, std::size_t i, const Dataset& b, std::size_t j) {
    const auto k = a.example_size();
    return a.labels[i] == b.labels[j] &&
           std::equal(a.images.data() + i * k, a.images.data() + (i + 1) * k, b.images.data() + j * k);
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("mnist IDX parse") {
    TempDir dir("idx");
    const auto images = idx_images(3, 28, 28);
    CHECK(images.size() == 16 + 3 * 784);
    write_bytes(dir / "img", images);
    write_bytes(dir / "lab", idx_labels(3));
    const auto d = load_mnist(dir / "img", dir / "lab");
    CHECK(d.images.shape() == Shape{3, 1, 28, 28});
    CHECK(d.labels == std::vector<int>{0, 1, 2});
    CHECK(d.images[1] == doctest::Approx(1.0 / 255.0));
    CHECK(d.images[255] == doctest::Approx(1.0));
    CHECK(*std::max_element(d.images.data(), d.images.data() + d.images.size()) <= 1.0f);

    // Same bytes, same dataset.
    const auto again = load_mnist(dir / "img", dir / "lab");
    CHECK(again.images == d.images);
}

TEST_CASE("mnist IDX errors are distinct") {
    TempDir dir("idx_bad");
    write_bytes(dir / "img", idx_images(3, 28, 28));
    write_bytes(dir / "lab", idx_labels(3));

    auto bad_magic = idx_labels(3);
    bad_magic[3] = 0x03;
    write_bytes(dir / "lab_magic", bad_magic);
    CHECK_THROWS_AS(load_mnist(dir / "img", dir / "lab_magic"), BadMagicError);

    auto truncated = idx_images(3, 28, 28);
    truncated.pop_back();
    write_bytes(dir / "img_short", truncated);
    CHECK_THROWS_AS(load_mnist(dir / "img_short", dir / "lab"), TruncatedError);

    write_bytes(dir / "lab4", idx_labels(4));
    CHECK_THROWS_AS(load_mnist(dir / "img", dir / "lab4"), CountMismatchError);

    auto trailing = idx_images(3, 28, 28);
    trailing.push_back(0);
    write_bytes(dir / "img_long", trailing);
    CHECK_THROWS_AS(load_mnist(dir / "img_long", dir / "lab"), FormatError);

    CHECK_THROWS_AS(load_mnist(dir / "missing", dir / "lab"), IoError);
}

TEST_CASE("cifar binary batches") {
    TempDir dir("cifar");
    write_bytes(dir / "one.bin", cifar_records(1));
    write_bytes(dir / "three.bin", cifar_records(3));
    const std::vector<std::filesystem::path> one{dir / "one.bin"};
    CHECK(load_cifar10(one).size() == 1);
    const std::vector<std::filesystem::path> both{dir / "one.bin", dir / "three.bin"};
    const auto d = load_cifar10(both);
    CHECK(d.images.shape() == Shape{4, 3, 32, 32});
    CHECK(d.labels == std::vector<int>{0, 0, 1, 2});
    CHECK(d.images[3072 + 1] == doctest::Approx(1.0 / 255.0));

    std::vector<unsigned char> bad(3072 * 2, 0);
    write_bytes(dir / "bad.bin", bad);
    const std::vector<std::filesystem::path> corrupt{dir / "bad.bin"};
    CHECK_THROWS_AS(load_cifar10(corrupt), FormatError);
}

TEST_CASE("mean subtraction uses the training mean") {
    Dataset train = toy_dataset(30, 1);
    Dataset test = toy_dataset(12, 2);
    const auto mean = mean_image(train);
    const auto [a, b] = subtract_mean(train, test);
    const auto shifted_mean = mean_image(a);
    for (float v : shifted_mean.values()) CHECK(std::abs(v) < 1e-5f);
    REQUIRE(b.mean_image.has_value());
    CHECK(*b.mean_image == mean);
    for (std::size_t i = 0; i < test.images.size(); ++i) {
        CHECK(b.images[i] == doctest::Approx(test.images[i] - mean[i % 16]).epsilon(1e-6));
    }

    Dataset constant = train;
    constant.images.fill(0.25f);
    const auto [c, unused] = subtract_mean(constant, constant);
    for (float v : c.images.values()) CHECK(v == 0.0f);

    Dataset wrong;
    wrong.images = Tensor<float>({2, 1, 3, 3});
    wrong.labels = {0, 1};
    CHECK_THROWS_AS(subtract_mean(train, wrong), ShapeError);
}

TEST_CASE("subsample") {
    CHECK(subsample_indices(50000, 0.5, 3).size() == 25000);
    CHECK(subsample_indices(10, 1.0, 3).size() == 10);
    CHECK(subsample_indices(50000, 0.02, 3).size() == 1000);
    CHECK(subsample_indices(1000, 0.1, 9) == subsample_indices(1000, 0.1, 9));
    CHECK(subsample_indices(1000, 0.1, 9) != subsample_indices(1000, 0.1, 10));
    const auto idx = subsample_indices(1000, 0.3, 4);
    CHECK(std::is_sorted(idx.begin(), idx.end()));
    CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == idx.size());
    CHECK_THROWS_AS(subsample_indices(10, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(subsample_indices(10, 1.5, 1), ConfigError);
    CHECK_THROWS_AS(subsample_indices(10, 0.01, 1), ConfigError);

    const Dataset d = toy_dataset(40, 5);
    const Dataset s = subsample(d, 0.25, 11);
    CHECK(s.size() == 10);
    for (std::size_t i = 0; i < s.size(); ++i) {
        bool found = false;
        for (std::size_t j = 0; j < d.size() && !found; ++j) found = same_record(s, i, d, j);
        CHECK(found);
    }
}

TEST_CASE("bootstrap resampling") {
    const std::size_t n = 50000;
    const auto idx = bag_indices(n, 17);
    CHECK(idx.size() == n);
    CHECK(idx == bag_indices(n, 17));
    const double distinct = static_cast<double>(std::set<std::size_t>(idx.begin(), idx.end()).size()) / n;
    CHECK(std::abs(distinct - (1.0 - std::exp(-1.0))) < 0.02);

    const Dataset d = toy_dataset(25, 6);
    const Dataset bag = bag_resample(d, 3);
    CHECK(bag.size() == d.size());
    const auto bidx = bag_indices(d.size(), 3);
    for (std::size_t i = 0; i < bag.size(); ++i) CHECK(same_record(bag, i, d, bidx[i]));
    CHECK_THROWS(bag_resample(Dataset{}, 1));
}

TEST_CASE("validation split is disjoint and sized") {
    const Dataset d = toy_dataset(50, 8);
    const auto [train, val] = split_validation(d, 0.1, 4);
    CHECK(val.size() == 5);
    CHECK(train.size() == 45);
    for (std::size_t i = 0; i < val.size(); ++i) {
        for (std::size_t j = 0; j < train.size(); ++j) CHECK_FALSE(same_record(val, i, train, j));
    }
    CHECK_THROWS_AS(split_validation(d, 0.0, 1), ConfigError);
}

TEST_CASE("labels must be in range") {
    Dataset d = toy_dataset(6, 1);
    d.labels[2] = 3;
    CHECK_THROWS_AS(d.validate(), FormatError);
    d.labels.pop_back();
    CHECK_THROWS_AS(d.validate(), CountMismatchError);
}

}
