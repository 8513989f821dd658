#pragma once

#include <cstdint>
#include <optional>

#include "gradalign/network.hpp"
#include "gradalign/rng.hpp"
#include "gradalign/tape.hpp"
#include "gradalign/tensor.hpp"

namespace gradalign {

enum class PerturbationSampler { uniform_ball, unit_direction };

struct PerturbationSpec {
    double epsilon = 8.0 / 255.0;  // l-inf radius in input units
    PerturbationSampler sampler = PerturbationSampler::uniform_ball;
    int sample_count = 1;
    std::uint64_t seed = 0;
};

// uniform_ball: delta ~ U([-eps, eps]^d). unit_direction: that draw scaled to
// unit l2 norm (the eps-ball direction used by the bound sweep).
Tensor sample_perturbation(const PerturbationSpec& spec, const Shape& shape, Rng& rng);

enum class CriterionKind { l2, cos, hessian_surrogate, upper_bound };

struct CriterionValue {
    CriterionKind kind;
    double value = 0.0;
    int point_index = -1;
    int direction_index = -1;
};

// Taped builders. They run on the active higher-order tape so the returned
// scalar can be differentiated w.r.t. watched parameters. Pass params as
// nullptr for diagnostics that only need the value.
struct CriterionTerm {
    Tensor value;
    bool degenerate = false;  // vanishing-gradient guard fired; value is the constant 0
};

CriterionTerm l2_criterion_taped(Tape& tape, const Network& net, const TapedParams* params,
                                 const Tensor& x, int y, const Tensor& delta,
                                 bool detach_base_gradient = false);
CriterionTerm cos_criterion_taped(Tape& tape, const Network& net, const TapedParams* params,
                                  const Tensor& x, int y, const Tensor& delta,
                                  bool detach_base_gradient = false);

// Both criteria from one pair of gradient evaluations.
struct CriterionPair {
    CriterionTerm l2, cos;
};
CriterionPair l2_cos_criteria_taped(Tape& tape, const Network& net, const TapedParams* params,
                                    const Tensor& x, int y, const Tensor& delta,
                                    bool detach_base_gradient = false);
Tensor hessian_surrogate_taped(Tape& tape, const Network& net, const TapedParams* params,
                               const Tensor& x, int y, int probes, std::uint64_t seed);
Tensor maxent_taped(Tape& tape, const Network& net, const TapedParams* params, const Tensor& x);

// Value-only conveniences.
double l2_criterion(const Network& net, const Tensor& x, int y, const Tensor& delta);
double cos_criterion(const Network& net, const Tensor& x, int y, const Tensor& delta);
double hessian_surrogate(const Network& net, const Tensor& x, int y, int probes,
                         std::uint64_t seed);
double maxent_value(const Network& net, const Tensor& x);

// Measured cosine criterion against the curvature term
// eps * ||H_g(x) d|| / ||grad g(x + eps d)|| for a unit direction d.
struct BoundPair {
    double measured = 0.0;
    double bound = 0.0;
    bool degenerate = false;
};
BoundPair crc_upper_bound(const Network& net, const Tensor& x, int y, const Tensor& unit_dir,
                          double eps);

// input gradient of logit y, as a raw tensor
Tensor input_gradient_value(const Network& net, const Tensor& x, int y);

// guard below which a gradient is treated as degenerate
inline constexpr double kGradNormGuard = 1e-10;
inline constexpr double kCosNormPad = 1e-12;

}  // namespace gradalign
