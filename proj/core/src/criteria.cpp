#include "gradalign/criteria.hpp"

#include <array>
#include <cmath>

#include "gradalign/autodiff.hpp"
#include "gradalign/ops.hpp"

namespace gradalign {

Tensor sample_perturbation(const PerturbationSpec& spec, const Shape& shape, Rng& rng) {
    if (spec.epsilon < 0.0) throw Error("perturbation: epsilon must be nonnegative");
    Tensor d(shape);
    for (std::int64_t i = 0; i < d.size(); ++i) d[i] = rng.uniform(-spec.epsilon, spec.epsilon);
    if (spec.sampler == PerturbationSampler::unit_direction) {
        double norm = 0.0;
        for (std::int64_t i = 0; i < d.size(); ++i) norm += d[i] * d[i];
        norm = std::sqrt(norm);
        while (norm < 1e-12) {  // essentially impossible; redraw for safety
            for (std::int64_t i = 0; i < d.size(); ++i) d[i] = rng.uniform(-1.0, 1.0);
            norm = 0.0;
            for (std::int64_t i = 0; i < d.size(); ++i) norm += d[i] * d[i];
            norm = std::sqrt(norm);
        }
        for (std::int64_t i = 0; i < d.size(); ++i) d[i] /= norm;
    }
    return d;
}

namespace {

struct TapedGradient {
    Tensor grad;
    std::string x_id;
};

TapedGradient logit_input_gradient(Tape& tape, const Network& net, const TapedParams* params,
                                   const Tensor& x, int y) {
    TapedGradient out;
    out.x_id = tape.fresh_id("x");
    Tensor xt = tape.watch(x, out.x_id);
    Tensor logits = params ? forward_logits(net, *params, xt) : forward_logits(net, xt);
    const std::array<std::string, 1> wrt{out.x_id};
    out.grad = tape.backward(pick(logits, y), wrt).grads.at(out.x_id);
    return out;
}

// gradient at x with no graph attached, regardless of the surrounding tape
Tensor detached_input_gradient(const Network& net, const Tensor& x, int y) {
    Tape inner(/*higher_order=*/false);
    Tensor xt = inner.watch(x, "x");
    Tensor logits = forward_logits(net, xt);
    const std::array<std::string, 1> wrt{"x"};
    return inner.backward(pick(logits, y), wrt).grads.at("x").detached();
}

double raw_norm(const Tensor& t) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < t.size(); ++i) acc += t[i] * t[i];
    return std::sqrt(acc);
}

void check_delta(const Tensor& x, const Tensor& delta) {
    if (delta.shape() != x.shape())
        throw Error("criterion: delta shape " + shape_str(delta.shape()) +
                    " does not match input " + shape_str(x.shape()));
}

}  // namespace

Tensor input_gradient_value(const Network& net, const Tensor& x, int y) {
    return detached_input_gradient(net, x, y);
}

namespace {

struct GradientPair {
    Tensor pert, base;
};

GradientPair criterion_gradients(Tape& tape, const Network& net, const TapedParams* params,
                                 const Tensor& x, int y, const Tensor& delta,
                                 bool detach_base_gradient) {
    check_delta(x, delta);
    Tensor x_pert(x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i) x_pert[i] = x[i] + delta[i];
    GradientPair pair;
    pair.pert = logit_input_gradient(tape, net, params, x_pert, y).grad;
    pair.base = detach_base_gradient ? detached_input_gradient(net, x, y)
                                     : logit_input_gradient(tape, net, params, x, y).grad;
    return pair;
}

CriterionTerm l2_from_gradients(const GradientPair& g) {
    CriterionTerm term;
    term.value = l2norm(sub(g.pert, g.base));
    return term;
}

CriterionTerm cos_from_gradients(const GradientPair& g) {
    CriterionTerm term;
    if (raw_norm(g.pert) < kGradNormGuard || raw_norm(g.base) < kGradNormGuard) {
        term.value = Tensor::scalar(0.0);
        term.degenerate = true;
        return term;
    }
    Tensor denom =
        mul(add_const(l2norm(g.pert), kCosNormPad), add_const(l2norm(g.base), kCosNormPad));
    Tensor cossim = div(dot(g.pert, g.base), denom);
    term.value = affine(cossim, -0.5, 0.5);  // (1 - cossim) / 2
    return term;
}

}  // namespace

CriterionTerm l2_criterion_taped(Tape& tape, const Network& net, const TapedParams* params,
                                 const Tensor& x, int y, const Tensor& delta,
                                 bool detach_base_gradient) {
    return l2_from_gradients(
        criterion_gradients(tape, net, params, x, y, delta, detach_base_gradient));
}

CriterionTerm cos_criterion_taped(Tape& tape, const Network& net, const TapedParams* params,
                                  const Tensor& x, int y, const Tensor& delta,
                                  bool detach_base_gradient) {
    return cos_from_gradients(
        criterion_gradients(tape, net, params, x, y, delta, detach_base_gradient));
}

CriterionPair l2_cos_criteria_taped(Tape& tape, const Network& net, const TapedParams* params,
                                    const Tensor& x, int y, const Tensor& delta,
                                    bool detach_base_gradient) {
    GradientPair g = criterion_gradients(tape, net, params, x, y, delta, detach_base_gradient);
    return {l2_from_gradients(g), cos_from_gradients(g)};
}

Tensor hessian_surrogate_taped(Tape& tape, const Network& net, const TapedParams* params,
                               const Tensor& x, int y, int probes, std::uint64_t seed) {
    if (net.activation == Activation::relu)
        throw Error(
            "hessian surrogate: the logit Hessian of a relu network is zero almost everywhere; "
            "use softplus activations");
    if (probes < 1) throw Error("hessian surrogate: need at least one probe");
    if (!tape.higher_order())
        throw Error("hessian surrogate: needs a higher-order tape to build curvature probes");
    std::string xid = tape.fresh_id("x");
    Tensor xt = tape.watch(x, xid);
    Tensor logits = params ? forward_logits(net, *params, xt) : forward_logits(net, xt);
    const std::array<std::string, 1> wrt{xid};
    Tensor g = tape.backward(pick(logits, y), wrt).grads.at(xid);

    Rng rng(seed);
    Tensor total = Tensor::scalar(0.0);
    for (int k = 0; k < probes; ++k) {
        Tensor v(x.shape());
        for (std::int64_t i = 0; i < v.size(); ++i) v[i] = rng.uniform() < 0.5 ? -1.0 : 1.0;
        Tensor inner = dot(g, v);
        if (inner.on_tape()) {
            Tensor hv = tape.backward(inner, wrt).grads.at(xid);
            total = add(total, dot(hv, hv));
        }
    }
    return sqrt(scale(total, 1.0 / probes));
}

Tensor maxent_taped(Tape& tape, const Network& net, const TapedParams* params, const Tensor& x) {
    (void)tape;
    Tensor logits = params ? forward_logits(net, *params, x) : forward_logits(net, x);
    // H(p) = logsumexp(z) - sum_c p_c z_c; avoids log of vanishing probabilities
    return sub(logsumexp(logits), dot(softmax(logits), logits));
}

double l2_criterion(const Network& net, const Tensor& x, int y, const Tensor& delta) {
    Tape tape(/*higher_order=*/false);
    return l2_criterion_taped(tape, net, nullptr, x, y, delta).value.item();
}

double cos_criterion(const Network& net, const Tensor& x, int y, const Tensor& delta) {
    Tape tape(/*higher_order=*/false);
    return cos_criterion_taped(tape, net, nullptr, x, y, delta).value.item();
}

double hessian_surrogate(const Network& net, const Tensor& x, int y, int probes,
                         std::uint64_t seed) {
    Tape tape(/*higher_order=*/true);
    return hessian_surrogate_taped(tape, net, nullptr, x, y, probes, seed).item();
}

double maxent_value(const Network& net, const Tensor& x) {
    Tape tape(/*higher_order=*/false);
    return maxent_taped(tape, net, nullptr, x).item();
}

BoundPair crc_upper_bound(const Network& net, const Tensor& x, int y, const Tensor& unit_dir,
                          double eps) {
    if (net.activation == Activation::relu)
        throw Error("cosine criterion bound: requires a twice differentiable network; "
                    "relu has zero second derivative almost everywhere");
    double n = raw_norm(unit_dir);
    if (std::abs(n - 1.0) > 1e-9)
        throw Error("cosine criterion bound: direction must have unit norm, got " +
                    std::to_string(n));

    Tensor delta(x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i) delta[i] = eps * unit_dir[i];

    BoundPair out;
    {
        Tape tape(/*higher_order=*/false);
        CriterionTerm term = cos_criterion_taped(tape, net, nullptr, x, y, delta);
        out.measured = term.value.item();
        out.degenerate = term.degenerate;
    }
    Tensor hd = hessian_vector_product(
        [&](const Tensor& xt) { return pick(forward_logits(net, xt), y); }, x, unit_dir);
    Tensor x_pert(x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i) x_pert[i] = x[i] + delta[i];
    double denom = raw_norm(detached_input_gradient(net, x_pert, y));
    if (denom < kGradNormGuard) {
        out.degenerate = true;
        out.bound = 0.0;
        return out;
    }
    out.bound = eps * raw_norm(hd) / denom;
    return out;
}

}  // namespace gradalign
