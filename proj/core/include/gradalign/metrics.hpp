#pragma once

#include <cstdint>
#include <vector>

#include "gradalign/attack.hpp"
#include "gradalign/attributions.hpp"
#include "gradalign/data.hpp"
#include "gradalign/network.hpp"

namespace gradalign {

enum class Similarity { cossim, pcc, ssim };

// cossim/pcc operate on the full flattened maps; ssim min-max normalizes
// both maps, collapses channels to a spatial map, and slides a 7x7 uniform
// window (global window when the map is smaller).
double similarity(const Tensor& a, const Tensor& b, Similarity kind);
double similarity(const AttributionMap& a, const AttributionMap& b, Similarity kind);

// mean over the dataset and over n uniform draws from [-eps, eps]^d of
// S(h(x + delta), h(x))
double random_perturbation_similarity(const Network& net, const Dataset& ds, AttrMethod method,
                                      Similarity measure, double eps, int n_samples,
                                      std::uint64_t seed, const AttrOptions& attr_opts = {});

// exactly round(gamma * d) ones selecting the highest-scoring features;
// ties break toward the lowest flat index
Tensor insertion_mask(const Tensor& map, double gamma);

struct InsertionCurve {
    std::vector<double> gammas;
    std::vector<double> probabilities;  // mean p_y(x_gamma) per gamma
    double mean_over_gamma = 0.0;
};

std::vector<double> default_gamma_grid();  // {0, 0.05, ..., 0.95, 1}

InsertionCurve insertion_curve(const Network& net, const Dataset& ds, AttrMethod method,
                               const std::vector<double>& gamma_grid,
                               const AttrOptions& attr_opts = {});

// Ordering comes from the attribution of the attacked input; the
// reconstruction itself uses the clean pixels unless reconstruct_adv_pixels.
InsertionCurve adv_insertion_curve(const Network& net, const Dataset& ds, AttrMethod method,
                                   const AttackConfig& attack_cfg,
                                   const std::vector<double>& gamma_grid,
                                   const AttrOptions& attr_opts = {},
                                   bool reconstruct_adv_pixels = false);

const char* similarity_name(Similarity s);
Similarity similarity_from_name(const std::string& s);

}  // namespace gradalign
