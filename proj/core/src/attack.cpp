#include "gradalign/attack.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "gradalign/ops.hpp"
#include "gradalign/tape.hpp"

namespace gradalign {

namespace {

Tensor l2_unit_normalize_raw(const Tensor& t) {
    double norm = 0.0;
    for (std::int64_t i = 0; i < t.size(); ++i) norm += t[i] * t[i];
    norm = std::sqrt(norm) + 1e-12;
    Tensor out(t.shape());
    for (std::int64_t i = 0; i < t.size(); ++i) out[i] = t[i] / norm;
    return out;
}

double raw_cossim(const Tensor& a, const Tensor& b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / ((std::sqrt(aa) + 1e-12) * (std::sqrt(bb) + 1e-12));
}

Tensor taped_map(Tape& tape, const Network& net, const Tensor& xt, const std::string& xid,
                 AttrMethod method, int y) {
    switch (method) {
        case AttrMethod::grad: return grad_attr_taped(tape, net, xt, xid, y);
        case AttrMethod::input_x_grad: return input_x_grad_attr_taped(tape, net, xt, xid, y);
        case AttrMethod::guided_backprop: return guided_backprop_attr_taped(tape, net, xt, xid, y);
        default:
            throw Error(std::string("attack: attribution method '") + attr_method_name(method) +
                        "' is not differentiated through; use grad, xgrad or gbp");
    }
}

// The loss the attack descends: normalized-map distance to the target, or
// its negation when pushing away from the original map.
Tensor attack_objective(Tape& tape, const Network& net, const Tensor& xt, const std::string& xid,
                        const AttackConfig& cfg, int y, const Tensor& reference_normalized) {
    Tensor h = taped_map(tape, net, xt, xid, cfg.method, y);
    Tensor hn = div(h, broadcast_scalar(add_const(l2norm(h), 1e-12), h.shape()));
    Tensor dist = l2norm(sub(hn, reference_normalized));
    return cfg.mode == AttackMode::targeted ? dist : neg(dist);
}

void project(Tensor& x_new, const Tensor& x0, double eps, const std::vector<double>& lo,
             const std::vector<double>& hi) {
    const int C = x_new.shape().size() == 3 ? x_new.shape()[0] : 1;
    const std::int64_t per = x_new.size() / C;
    for (int c = 0; c < C; ++c) {
        double dlo = lo.empty() ? -1e308 : lo[static_cast<std::size_t>(std::min<int>(c, lo.size() - 1))];
        double dhi = hi.empty() ? 1e308 : hi[static_cast<std::size_t>(std::min<int>(c, hi.size() - 1))];
        for (std::int64_t i = 0; i < per; ++i) {
            std::int64_t k = c * per + i;
            double v = std::clamp(x_new[k], x0[k] - eps, x0[k] + eps);
            x_new[k] = std::clamp(v, dlo, dhi);
        }
    }
}

}  // namespace

AttackResult run_aam(const Network& net, const Tensor& x, const AttackConfig& cfg,
                     const std::vector<double>& domain_lo, const std::vector<double>& domain_hi) {
    if (cfg.iterations < 1) throw Error("attack: need at least one iteration");
    if (!attack_differentiable(cfg.method))
        throw Error(std::string("attack: attribution method '") + attr_method_name(cfg.method) +
                    "' is not differentiated through; use grad, xgrad or gbp");
    const int y = predict_class(net, x);

    // reference map: normalized target for targeted mode, frozen normalized
    // original for untargeted mode
    Tensor reference;
    if (cfg.mode == AttackMode::targeted) {
        if (!cfg.target_map)
            throw Error("attack: targeted mode needs a target map");
        if (cfg.target_map->shape() != x.shape())
            throw Error("attack: target map shape " + shape_str(cfg.target_map->shape()) +
                        " does not match input " + shape_str(x.shape()));
        reference = l2_unit_normalize_raw(*cfg.target_map);
    } else {
        AttrOptions opts;
        reference = l2_unit_normalize_raw(
            compute_attribution(net, x, y, cfg.method, opts).scores);
    }

    const double step = cfg.step_size > 0.0 ? cfg.step_size : cfg.epsilon / 10.0;

    Tensor x_adv = x.clone();
    AttackResult result;
    double current_loss;
    {
        Tape tape(/*higher_order=*/true);
        std::string xid = tape.fresh_id("xadv");
        Tensor xt = tape.watch(x_adv, xid);
        current_loss = attack_objective(tape, net, xt, xid, cfg, y, reference).item();
    }
    result.loss_trace.push_back(current_loss);

    for (int it = 0; it < cfg.iterations; ++it) {
        Tensor grad;
        {
            Tape tape(/*higher_order=*/true);
            std::string xid = tape.fresh_id("xadv");
            Tensor xt = tape.watch(x_adv, xid);
            Tensor obj = attack_objective(tape, net, xt, xid, cfg, y, reference);
            if (!obj.on_tape()) break;  // constant attribution, nothing to move
            const std::array<std::string, 1> wrt{xid};
            grad = tape.backward(obj, wrt).grads.at(xid).detached();
        }
        Tensor x_new = x_adv.clone();
        for (std::int64_t i = 0; i < x_new.size(); ++i) {
            double s = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
            x_new[i] -= step * s;
        }
        project(x_new, x, cfg.epsilon, domain_lo, domain_hi);

        if (predict_class(net, x_new) != y) continue;  // constraint: revert the step

        double new_loss;
        {
            Tape tape(/*higher_order=*/true);
            std::string xid = tape.fresh_id("xadv");
            Tensor xt = tape.watch(x_new, xid);
            new_loss = attack_objective(tape, net, xt, xid, cfg, y, reference).item();
        }
        if (cfg.revert_on_increase && new_loss > current_loss) continue;

        x_adv = std::move(x_new);
        current_loss = new_loss;
        result.loss_trace.push_back(current_loss);
    }

    result.x_adv = x_adv;
    result.prediction_preserved = predict_class(net, x_adv) == y;
    AttrOptions opts;
    result.final_map = compute_attribution(net, x_adv, y, cfg.method, opts);
    Tensor final_n = l2_unit_normalize_raw(result.final_map.scores);
    Tensor orig_n =
        l2_unit_normalize_raw(compute_attribution(net, x, y, cfg.method, opts).scores);
    if (cfg.mode == AttackMode::targeted)
        result.similarity_to_target = raw_cossim(final_n, reference);
    else
        result.similarity_to_target = 0.0;
    result.similarity_to_original = raw_cossim(final_n, orig_n);
    return result;
}

AttackResult targeted_aam(const Network& net, const Tensor& x, const AttackConfig& cfg,
                          const std::vector<double>& lo, const std::vector<double>& hi) {
    AttackConfig c = cfg;
    c.mode = AttackMode::targeted;
    return run_aam(net, x, c, lo, hi);
}

AttackResult untargeted_aam(const Network& net, const Tensor& x, const AttackConfig& cfg,
                            const std::vector<double>& lo, const std::vector<double>& hi) {
    AttackConfig c = cfg;
    c.mode = AttackMode::untargeted;
    return run_aam(net, x, c, lo, hi);
}

AttributionMap make_frame_target(const Shape& input_shape, int border_width) {
    if (input_shape.size() < 2)
        throw Error("frame target: input must have spatial dims, got " + shape_str(input_shape));
    const int H = input_shape[input_shape.size() - 2];
    const int W = input_shape[input_shape.size() - 1];
    if (border_width < 1)
        throw Error("frame target: border width must be at least 1");
    if (2 * border_width >= std::min(H, W))
        throw Error("frame target: border width " + std::to_string(border_width) +
                    " covers the whole " + std::to_string(H) + "x" + std::to_string(W) + " map");
    Tensor t(input_shape);
    const int C = input_shape.size() == 3 ? input_shape[0] : 1;
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                bool on_ring = i < border_width || i >= H - border_width || j < border_width ||
                               j >= W - border_width;
                if (on_ring) t[(static_cast<std::int64_t>(c) * H + i) * W + j] = 1.0;
            }
    return {std::move(t), AttrMethod::grad, 0, std::nullopt};
}

}  // namespace gradalign
