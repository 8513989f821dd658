#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gradalign/network.hpp"
#include "gradalign/tensor.hpp"

namespace gradalign {

enum class AttrMethod { grad, input_x_grad, guided_backprop, lrp, smoothgrad };

enum class NormScheme { l2_unit, minmax_255, abs_sum_1 };

struct AttributionMap {
    Tensor scores;  // same shape as the input
    AttrMethod method = AttrMethod::grad;
    int class_index = 0;
    std::optional<NormScheme> normalized;
};

AttributionMap grad_attr(const Network& net, const Tensor& x, int y);
AttributionMap input_x_grad_attr(const Network& net, const Tensor& x, int y);
AttributionMap guided_backprop_attr(const Network& net, const Tensor& x, int y);
// lo/hi: input-domain bounds per channel (rank-3 input) or one entry (vector input).
// layer_sums, when given, receives the total relevance after each propagation
// step, starting from the output layer's 1.0.
AttributionMap lrp_attr(const Network& net, const Tensor& x, int y, const std::vector<double>& lo,
                        const std::vector<double>& hi,
                        std::vector<double>* layer_sums = nullptr);
AttributionMap smoothgrad_attr(const Network& net, const Tensor& x, int y, double sigma,
                               int n_samples, std::uint64_t seed);

struct AttrOptions {
    double smoothgrad_sigma = 0.1;
    int smoothgrad_samples = 8;
    std::uint64_t seed = 0;
    std::vector<double> lo{0.0}, hi{1.0};  // lrp bounds
};
AttributionMap compute_attribution(const Network& net, const Tensor& x, int y, AttrMethod method,
                                   const AttrOptions& opts = {});

AttributionMap normalize_map(const AttributionMap& map, NormScheme scheme);

// Taped builders for score maps the attack differentiates through. x must be
// a tensor watched on `tape`; the result stays on the tape.
Tensor grad_attr_taped(Tape& tape, const Network& net, const Tensor& x_taped,
                       const std::string& x_id, int y);
Tensor input_x_grad_attr_taped(Tape& tape, const Network& net, const Tensor& x_taped,
                               const std::string& x_id, int y);
Tensor guided_backprop_attr_taped(Tape& tape, const Network& net, const Tensor& x_taped,
                                  const std::string& x_id, int y);
bool attack_differentiable(AttrMethod method);

// Heatmap export: binary portable graymap of the minmax_255 map, the raw
// 64-bit scores, and a text sidecar (shape, method, class, normalization).
void export_heatmap(const AttributionMap& map, const std::string& path_base);

const char* attr_method_name(AttrMethod m);
AttrMethod attr_method_from_name(const std::string& s);
const char* norm_scheme_name(NormScheme s);
NormScheme norm_scheme_from_name(const std::string& s);

}  // namespace gradalign
