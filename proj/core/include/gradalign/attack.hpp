#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gradalign/attributions.hpp"
#include "gradalign/network.hpp"

namespace gradalign {

enum class AttackMode { targeted, untargeted };

struct AttackConfig {
    AttackMode mode = AttackMode::targeted;
    double epsilon = 4.0 / 255.0;  // l-inf radius
    double step_size = 0.0;        // 0 picks epsilon / 10
    int iterations = 100;
    AttrMethod method = AttrMethod::grad;
    NormScheme normalization = NormScheme::l2_unit;
    bool revert_on_increase = false;  // makes the loss trace non-increasing
    std::uint64_t seed = 0;
    std::optional<Tensor> target_map;  // required in targeted mode
};

struct AttackResult {
    Tensor x_adv;
    // objective the attack descends at each accepted iterate: distance to the
    // target map, or negated distance to the original map when untargeted
    std::vector<double> loss_trace;
    bool prediction_preserved = true;     // holds by construction
    AttributionMap final_map;
    double similarity_to_target = 0.0;    // cossim of l2-normalized maps
    double similarity_to_original = 0.0;
};

// Signed-gradient steps on the normalized attribution distance, projected to
// the l-inf ball and the input domain each step; a step that flips the
// argmax prediction is reverted.
AttackResult run_aam(const Network& net, const Tensor& x, const AttackConfig& cfg,
                     const std::vector<double>& domain_lo, const std::vector<double>& domain_hi);

AttackResult targeted_aam(const Network& net, const Tensor& x, const AttackConfig& cfg,
                          const std::vector<double>& domain_lo,
                          const std::vector<double>& domain_hi);
AttackResult untargeted_aam(const Network& net, const Tensor& x, const AttackConfig& cfg,
                            const std::vector<double>& domain_lo,
                            const std::vector<double>& domain_hi);

// Binary map, 1 on the border ring of the spatial dims, 0 inside.
AttributionMap make_frame_target(const Shape& input_shape, int border_width);

}  // namespace gradalign
