#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gradalign/criteria.hpp"
#include "gradalign/data.hpp"
#include "gradalign/network.hpp"
#include "gradalign/optimizer.hpp"

namespace gradalign {

enum class Regularizer { ce, hessian, l2, cos, l2cos, maxent, atex, iga };

struct RunConfig {
    Regularizer reg = Regularizer::ce;
    double lambda_cos = 0.0;  // cosine-term weight (combined and cos-only runs)
    double lambda_l2 = 0.0;   // l2-term weight (combined runs)
    double lambda = 0.0;      // single-knob methods: l2-only, hessian, maxent, atex, iga
    PerturbationSpec perturbation;
    OptimizerConfig optimizer;
    int epochs = 0;
    int batch_size = 128;
    std::vector<int> lr_milestones;  // strictly increasing, 1-based epochs
    double lr_decay = 0.1;
    double softplus_beta = 3.0;  // echoed into manifests; the network carries its own
    bool detach_base_gradient = true;
    std::uint64_t seed = 0;
    int hessian_probes = 1;
    // atex
    double atex_epsilon = 2.0;
    int atex_parallel_samples = 1;
    int atex_perp_samples = 1;
    double smoothgrad_sigma = 0.1;
    int smoothgrad_samples = 8;
    // iga
    double iga_eps_attack = 8.0 / 255.0;
    int iga_attack_steps = 5;
};

struct EpochStats {
    int epoch = 0;
    double ce = 0.0;
    double l2_term = 0.0;     // weighted
    double cos_term = 0.0;    // weighted
    double extra_term = 0.0;  // weighted hessian/maxent/atex/iga contribution
    double total = 0.0;
    double lr = 0.0;
    double test_accuracy = 0.0;
    double seconds = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    double final_test_accuracy = 0.0;
    std::int64_t peak_tape_bytes = 0;
    double total_seconds = 0.0;
    std::string checkpoint_path;
};

// Per-sample loss terms on the ambient tape. Values are the weighted
// contributions; their sum equals total.
struct SampleLoss {
    Tensor total;
    double ce = 0.0, l2_term = 0.0, cos_term = 0.0, extra_term = 0.0;
};

// delta: the one perturbation draw for this iteration (unused by ce/maxent/
// hessian). probe_seed feeds the Hutchinson probes of hessian runs.
SampleLoss sample_loss(Tape& tape, const Network& net, const TapedParams& params, const Tensor& x,
                       int y, const Tensor* delta, const RunConfig& cfg, std::uint64_t probe_seed);

// Distillation on attribution-aligned samples. The teacher is frozen;
// smoothgrad on the teacher picks the sampling direction.
SampleLoss atex_loss(Tape& tape, const Network& teacher, const Network& student,
                     const TapedParams& params, const Tensor& x, const RunConfig& cfg, Rng& rng);

// Soft-margin triplet loss on cosine distances between class gradients and
// the input, evaluated at the worst perturbation found by signed-gradient
// ascent inside the epsilon ball.
SampleLoss iga_loss(Tape& tape, const Network& net, const TapedParams& params, const Tensor& x,
                    int y, const RunConfig& cfg, Rng& rng);
Tensor iga_attr_loss_taped(Tape& tape, const Network& net, const TapedParams* params,
                           const Tensor& x, int y);

double test_accuracy(const Network& net, const Dataset& ds);
double lr_at_epoch(const RunConfig& cfg, int epoch);  // 1-based

// Runs the configured loop: per-epoch decay at the milestones, CSV loss log
// and checkpoint under out_dir (skipped when empty), abort on non-finite
// loss. Reproducible bit-for-bit from cfg.seed.
TrainReport train(Network& net, const Dataset& train_ds, const Dataset& test_ds,
                  const RunConfig& cfg, const std::string& out_dir = "",
                  const Network* teacher = nullptr);

const char* regularizer_name(Regularizer r);
Regularizer regularizer_from_name(const std::string& s);

}  // namespace gradalign
