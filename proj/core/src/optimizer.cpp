#include "gradalign/optimizer.hpp"

#include <cmath>

namespace gradalign {

namespace {

void update_tensor(Tensor& param, const Tensor* grad, const std::string& id,
                   OptimizerState& state, const OptimizerConfig& cfg, double lr) {
    if (grad && grad->shape() != param.shape())
        throw Error("optimizer: gradient shape " + shape_str(grad->shape()) +
                    " does not match parameter '" + id + "' " + shape_str(param.shape()));
    Tensor next = param.clone();
    const std::int64_t n = param.size();

    if (cfg.kind == OptimizerKind::sgd) {
        for (std::int64_t i = 0; i < n; ++i) {
            double g = grad ? (*grad)[i] : 0.0;
            g += cfg.weight_decay * param[i];
            next[i] = param[i] - lr * g;
        }
        param = std::move(next);
        return;
    }

    auto& m = state.m[id];
    auto& v = state.v[id];
    if (!m.defined()) m = Tensor::zeros(param.shape());
    if (!v.defined()) v = Tensor::zeros(param.shape());
    Tensor m_next = m.clone();
    Tensor v_next = v.clone();

    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

    for (std::int64_t i = 0; i < n; ++i) {
        double g = grad ? (*grad)[i] : 0.0;
        if (cfg.kind == OptimizerKind::adam) g += cfg.weight_decay * param[i];
        m_next[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v_next[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        double m_hat = m_next[i] / bc1;
        double v_hat = v_next[i] / bc2;
        double step = lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        if (cfg.kind == OptimizerKind::adamw) step += lr * cfg.weight_decay * param[i];
        next[i] = param[i] - step;
    }
    m = std::move(m_next);
    v = std::move(v_next);
    param = std::move(next);
}

}  // namespace

void optimizer_step(Network& net, const std::map<std::string, Tensor>& grads,
                    OptimizerState& state, const OptimizerConfig& cfg, double lr_override) {
    const double lr = lr_override >= 0.0 ? lr_override : cfg.lr;
    state.step += 1;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        Layer& l = net.layers[i];
        if (!l.parameterized()) continue;
        std::string wid = "w" + std::to_string(i);
        auto wit = grads.find(wid);
        update_tensor(l.weight, wit != grads.end() ? &wit->second : nullptr, wid, state, cfg, lr);
        if (l.spec.has_bias) {
            std::string bid = "b" + std::to_string(i);
            auto bit = grads.find(bid);
            update_tensor(l.bias, bit != grads.end() ? &bit->second : nullptr, bid, state, cfg, lr);
        }
    }
}

OptimizerKind optimizer_from_name(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    if (s == "adamw") return OptimizerKind::adamw;
    throw Error("unknown optimizer '" + s + "'");
}

const char* optimizer_name(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::sgd: return "sgd";
        case OptimizerKind::adam: return "adam";
        case OptimizerKind::adamw: return "adamw";
    }
    return "?";
}

}  // namespace gradalign
