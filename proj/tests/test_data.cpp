#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "gradalign/data.hpp"
#include "gradalign/rng.hpp"

using namespace gradalign;

TEST_CASE("interleaved half-circles") {
    SUBCASE("no jitter puts every point exactly on its circle") {
        Dataset ds = make_moons_2d(80, 0.0, 3);
        for (std::size_t i = 0; i < ds.size(); ++i) {
            double px = ds.inputs[i][0], py = ds.inputs[i][1];
            double r = ds.labels[i] == 0
                           ? std::sqrt(px * px + py * py)
                           : std::sqrt((px - 1.0) * (px - 1.0) + (py - 0.5) * (py - 0.5));
            CHECK(r == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    SUBCASE("same seed reproduces the dataset") {
        Dataset a = make_moons_2d(50, 0.1, 7);
        Dataset b = make_moons_2d(50, 0.1, 7);
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a.labels[i] == b.labels[i]);
            CHECK(a.inputs[i][0] == b.inputs[i][0]);
            CHECK(a.inputs[i][1] == b.inputs[i][1]);
        }
    }
    SUBCASE("classes are balanced") {
        for (int n : {10, 11, 101}) {
            Dataset ds = make_moons_2d(n, 0.05, 1);
            int c0 = 0, c1 = 0;
            for (int l : ds.labels) (l == 0 ? c0 : c1)++;
            CHECK(std::abs(c0 - c1) <= 1);
        }
    }
    SUBCASE("domain bounds match the stored extrema") {
        Dataset ds = make_moons_2d(64, 0.2, 9);
        double lo = 1e308, hi = -1e308;
        for (const auto& x : ds.inputs)
            for (int i = 0; i < 2; ++i) {
                lo = std::min(lo, x[i]);
                hi = std::max(hi, x[i]);
            }
        CHECK(ds.lo[0] == lo);
        CHECK(ds.hi[0] == hi);
    }
}

TEST_CASE("glyph images") {
    SUBCASE("empty request gives an empty dataset") {
        Dataset ds = make_synthetic_digits(0, 4, 16, 0);
        CHECK(ds.size() == 0);
    }
    SUBCASE("same seed draws identical datasets") {
        Dataset a = make_synthetic_digits(24, 4, 16, 5);
        Dataset b = make_synthetic_digits(24, 4, 16, 5);
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::int64_t k = 0; k < a.inputs[i].size(); ++k)
                CHECK(a.inputs[i][k] == b.inputs[i][k]);
    }
    SUBCASE("pixels stay inside the unit range and classes cycle") {
        Dataset ds = make_synthetic_digits(40, 4, 16, 2);
        for (std::size_t i = 0; i < ds.size(); ++i) {
            CHECK(ds.labels[i] == static_cast<int>(i) % 4);
            for (std::int64_t k = 0; k < ds.inputs[i].size(); ++k) {
                CHECK(ds.inputs[i][k] >= 0.0);
                CHECK(ds.inputs[i][k] <= 1.0);
            }
        }
    }
    SUBCASE("side below the minimum is rejected") {
        CHECK_THROWS_AS(make_synthetic_digits(10, 4, 7, 0), Error);
    }
}

namespace {

std::string write_fake_batch(int rows, unsigned seed_byte) {
    std::string path = "fake_batch_" + std::to_string(seed_byte) + ".bin";
    std::ofstream os(path, std::ios::binary);
    for (int r = 0; r < rows; ++r) {
        unsigned char label = static_cast<unsigned char>(r % 10);
        os.put(static_cast<char>(label));
        for (int i = 0; i < 3072; ++i)
            os.put(static_cast<char>((r * 31 + i * 7 + seed_byte) % 256));
    }
    return path;
}

}  // namespace

TEST_CASE("binary batch loading") {
    SUBCASE("pixels are scaled to the unit interval") {
        std::string path = write_fake_batch(20, 1);
        Dataset ds = load_cifar_binary(path);
        CHECK(ds.size() == 20);
        CHECK(ds.inputs[0].shape() == Shape{3, 32, 32});
        for (std::int64_t k = 0; k < ds.inputs[0].size(); ++k) {
            CHECK(ds.inputs[0][k] >= 0.0);
            CHECK(ds.inputs[0][k] <= 1.0);
        }
        std::remove(path.c_str());
    }
    SUBCASE("class subset and per-class limits") {
        std::string path = write_fake_batch(40, 2);
        Dataset ds = load_cifar_binary(path, {1, 3}, 2);
        CHECK(ds.size() == 4);
        for (int l : ds.labels) CHECK((l == 1 || l == 3));
        Dataset empty = load_cifar_binary(path, {}, 0);
        CHECK(empty.size() == 0);
        std::remove(path.c_str());
    }
    SUBCASE("truncated files are rejected with the row size named") {
        std::string path = "truncated.bin";
        {
            std::ofstream os(path, std::ios::binary);
            for (int i = 0; i < 3073 + 100; ++i) os.put(7);
        }
        CHECK_THROWS_WITH_AS(load_cifar_binary(path), doctest::Contains("3073"), Error);
        std::remove(path.c_str());
    }
    SUBCASE("re-encoding a loaded dataset reproduces the original bytes") {
        std::string path = write_fake_batch(10, 3);
        Dataset ds = load_cifar_binary(path);
        std::string out = "reencoded.bin";
        write_binary_dataset(out, ds);
        std::ifstream f1(path, std::ios::binary), f2(out, std::ios::binary);
        std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
        std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
        CHECK(b1 == b2);
        std::remove(path.c_str());
        std::remove(out.c_str());
        std::remove((out + ".manifest.txt").c_str());
    }
}

TEST_CASE("train/test splitting is a pure function of the seed") {
    Dataset ds = make_synthetic_digits(30, 3, 8, 1);
    auto [tr1, te1] = split_train_test(ds, 0.25, 11);
    auto [tr2, te2] = split_train_test(ds, 0.25, 11);
    CHECK(tr1.size() == tr2.size());
    CHECK(te1.size() == 8);  // llround(0.25 * 30)
    for (std::size_t i = 0; i < tr1.size(); ++i) CHECK(tr1.labels[i] == tr2.labels[i]);
    auto [tr3, te3] = split_train_test(ds, 0.25, 12);
    bool differs = false;
    for (std::size_t i = 0; i < std::min(te1.size(), te3.size()); ++i)
        if (te1.labels[i] != te3.labels[i]) differs = true;
    CHECK(differs);
}
