#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "gradalign/network.hpp"
#include "gradalign/rng.hpp"
#include "gradalign/tensor.hpp"

namespace gradalign::testing {

// Central finite differences of a scalar function of one tensor. This is the
// independent oracle: it only ever calls f on perturbed copies, never the
// tape. 64-bit, step h.
inline Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                   double h = 1e-5) {
    Tensor g(x.shape());
    Tensor probe = x.clone();
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + h;
        const double up = f(probe);
        probe[i] = saved - h;
        const double down = f(probe);
        probe[i] = saved;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

// max_i |a_i - b_i| / max(||b||_inf, floor)
inline double rel_err(const Tensor& a, const Tensor& b, double floor_scale = 1e-8) {
    double worst = 0.0, scale = floor_scale;
    for (std::int64_t i = 0; i < b.size(); ++i) scale = std::max(scale, std::abs(b[i]));
    for (std::int64_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst / scale;
}

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// a small random dense network for gradient checks
inline Network random_mlp(Rng& rng, const std::vector<int>& widths, Activation act,
                          double beta = 3.0) {
    Network net = init_parameters(mlp_spec(widths, act, beta), rng.next_u64());
    // shift away from the kaiming defaults so biases participate
    for (auto& l : net.layers)
        if (l.bias.defined())
            for (std::int64_t i = 0; i < l.bias.size(); ++i) l.bias[i] = 0.1 * rng.uniform(-1, 1);
    return net;
}

// conv -> act -> pool -> flatten -> dense, exercises every op kind
inline Network random_small_cnn(Rng& rng, Activation act, double beta = 3.0, int classes = 3) {
    NetSpec spec;
    spec.activation = act;
    spec.beta = beta;
    spec.class_count = classes;
    spec.input_shape = {2, 6, 6};
    LayerSpec c;
    c.kind = LayerKind::conv2d;
    c.in = 2;
    c.out = 3;
    c.kernel = 3;
    c.pad = 1;
    c.activated = true;
    spec.layers.push_back(c);
    LayerSpec p;
    p.kind = LayerKind::maxpool2d;
    p.pool = 2;
    spec.layers.push_back(p);
    LayerSpec f;
    f.kind = LayerKind::flatten;
    spec.layers.push_back(f);
    LayerSpec d;
    d.kind = LayerKind::dense;
    d.in = 3 * 3 * 3;
    d.out = classes;
    spec.layers.push_back(d);
    Network net = init_parameters(spec, rng.next_u64());
    for (auto& l : net.layers)
        if (l.bias.defined())
            for (std::int64_t i = 0; i < l.bias.size(); ++i) l.bias[i] = 0.1 * rng.uniform(-1, 1);
    return net;
}

// flattens every parameter into one vector (for finite differences in
// parameter space)
inline std::vector<double*> parameter_slots(Network& net) {
    std::vector<double*> slots;
    for (auto& l : net.layers) {
        if (!l.parameterized()) continue;
        for (std::int64_t i = 0; i < l.weight.size(); ++i) slots.push_back(&l.weight[i]);
        if (l.bias.defined())
            for (std::int64_t i = 0; i < l.bias.size(); ++i) slots.push_back(&l.bias[i]);
    }
    return slots;
}

}  // namespace gradalign::testing
