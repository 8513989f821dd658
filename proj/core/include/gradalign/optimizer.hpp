#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "gradalign/network.hpp"

namespace gradalign {

enum class OptimizerKind { sgd, adam, adamw };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

struct OptimizerState {
    std::int64_t step = 0;
    std::map<std::string, Tensor> m, v;  // first/second moment per parameter id
};

// One update over all parameters. grads maps parameter ids ("w0", "b0", ...)
// to gradient tensors; missing entries are treated as zero. Parameters are
// replaced, never mutated in place, so taped handles from earlier
// evaluations stay valid. lr overrides cfg.lr when nonnegative.
void optimizer_step(Network& net, const std::map<std::string, Tensor>& grads,
                    OptimizerState& state, const OptimizerConfig& cfg, double lr_override = -1.0);

OptimizerKind optimizer_from_name(const std::string& s);
const char* optimizer_name(OptimizerKind k);

}  // namespace gradalign
