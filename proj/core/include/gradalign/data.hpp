#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gradalign/tensor.hpp"

namespace gradalign {

struct Dataset {
    std::vector<Tensor> inputs;
    std::vector<int> labels;
    int class_count = 0;
    std::vector<double> lo, hi;  // actual per-channel min/max of the stored inputs
    std::string split;

    std::size_t size() const { return inputs.size(); }
    void refresh_bounds();  // recompute lo/hi from the stored inputs
};

// Two interleaved half-circles with Gaussian jitter, balanced classes.
Dataset make_moons_2d(int n, double noise, std::uint64_t seed);

// Images with class-dependent geometric glyphs plus noise, single channel.
Dataset make_synthetic_digits(int n, int classes, int side, std::uint64_t seed);

// Standard small-image binary batch layout: rows of one label byte followed
// by 3072 pixel bytes (3 channels x 32 x 32). Pixels scaled to [0,1].
Dataset load_cifar_binary(const std::string& path, const std::vector<int>& class_subset = {},
                          int per_class_limit = -1, bool standardize = false);

// Export any dataset to the same layout (one label byte + one byte per input
// element, rounded from [0,1]); a text manifest goes next to it.
void write_binary_dataset(const std::string& path, const Dataset& ds);

std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, double test_fraction,
                                             std::uint64_t seed);

}  // namespace gradalign
