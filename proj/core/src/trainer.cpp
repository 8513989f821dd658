#include "gradalign/trainer.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "gradalign/attributions.hpp"
#include "gradalign/ops.hpp"

namespace gradalign {

namespace {

bool needs_delta(Regularizer r) {
    return r == Regularizer::l2 || r == Regularizer::cos || r == Regularizer::l2cos;
}

bool needs_higher_order(Regularizer r) {
    return r == Regularizer::l2 || r == Regularizer::cos || r == Regularizer::l2cos ||
           r == Regularizer::hessian || r == Regularizer::iga;
}

void validate(const RunConfig& cfg) {
    if (cfg.lambda < 0.0 || cfg.lambda_cos < 0.0 || cfg.lambda_l2 < 0.0)
        throw Error("train: regularization constants must be nonnegative");
    if (cfg.batch_size < 1) throw Error("train: batch size must be positive");
    if (cfg.epochs < 0) throw Error("train: epochs must be nonnegative");
    for (std::size_t i = 1; i < cfg.lr_milestones.size(); ++i)
        if (cfg.lr_milestones[i] <= cfg.lr_milestones[i - 1])
            throw Error("train: lr milestones must be strictly increasing");
}

}  // namespace

SampleLoss sample_loss(Tape& tape, const Network& net, const TapedParams& params, const Tensor& x,
                       int y, const Tensor* delta, const RunConfig& cfg,
                       std::uint64_t probe_seed) {
    SampleLoss out;
    Tensor ce = cross_entropy(forward_logits(net, params, x), y);
    out.ce = ce.item();
    switch (cfg.reg) {
        case Regularizer::ce:
            out.total = ce;
            break;
        case Regularizer::l2: {
            if (!delta) throw Error("sample_loss: l2 regularizer needs a perturbation draw");
            CriterionTerm t = l2_criterion_taped(tape, net, &params, x, y, *delta,
                                                 cfg.detach_base_gradient);
            out.l2_term = cfg.lambda * t.value.item();
            out.total = add(ce, scale(t.value, cfg.lambda));
            break;
        }
        case Regularizer::cos: {
            if (!delta) throw Error("sample_loss: cos regularizer needs a perturbation draw");
            CriterionTerm t = cos_criterion_taped(tape, net, &params, x, y, *delta,
                                                  cfg.detach_base_gradient);
            out.cos_term = cfg.lambda_cos * t.value.item();
            out.total = add(ce, scale(t.value, cfg.lambda_cos));
            break;
        }
        case Regularizer::l2cos: {
            if (!delta) throw Error("sample_loss: combined regularizer needs a perturbation draw");
            CriterionPair pair = l2_cos_criteria_taped(tape, net, &params, x, y, *delta,
                                                       cfg.detach_base_gradient);
            out.l2_term = cfg.lambda_l2 * pair.l2.value.item();
            out.cos_term = cfg.lambda_cos * pair.cos.value.item();
            out.total = add(ce, add(scale(pair.cos.value, cfg.lambda_cos),
                                    scale(pair.l2.value, cfg.lambda_l2)));
            break;
        }
        case Regularizer::hessian: {
            Tensor h = hessian_surrogate_taped(tape, net, &params, x, y, cfg.hessian_probes,
                                               probe_seed);
            out.extra_term = cfg.lambda * h.item();
            out.total = add(ce, scale(h, cfg.lambda));
            break;
        }
        case Regularizer::maxent: {
            Tensor ent = maxent_taped(tape, net, &params, x);
            out.extra_term = -cfg.lambda * ent.item();
            out.total = sub(ce, scale(ent, cfg.lambda));
            break;
        }
        case Regularizer::atex:
        case Regularizer::iga:
            throw Error("sample_loss: atex/iga have dedicated loss builders");
    }
    return out;
}

// ---------------------------------------------------------------------------
// distillation baseline

namespace {

Tensor log_probs_const(const Network& net, const Tensor& x) {
    NoRecord plain;
    Tensor z = forward_logits(net, x);
    Tensor lse = logsumexp(z);
    Tensor out(z.shape());
    for (std::int64_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse.item();
    return out;
}

// KL(student(x) || teacher reference), differentiable through the student
Tensor kl_to_teacher(const Network& student, const TapedParams& params, const Tensor& x,
                     const Tensor& teacher_logp) {
    Tensor z = forward_logits(student, params, x);
    Tensor p = softmax(z);
    Tensor logp = sub(z, broadcast_scalar(logsumexp(z), z.shape()));
    return sub(dot(p, logp), dot(p, teacher_logp));
}

}  // namespace

SampleLoss atex_loss(Tape& tape, const Network& teacher, const Network& student,
                     const TapedParams& params, const Tensor& x, const RunConfig& cfg, Rng& rng) {
    (void)tape;
    SampleLoss out;
    Tensor distill = kl_to_teacher(student, params, x, log_probs_const(teacher, x));
    out.ce = distill.item();
    out.total = distill;

    AttributionMap h = smoothgrad_attr(teacher, x, predict_class(teacher, x),
                                       cfg.smoothgrad_sigma, cfg.smoothgrad_samples,
                                       rng.next_u64());
    double norm = 0.0;
    for (std::int64_t i = 0; i < h.scores.size(); ++i) norm += h.scores[i] * h.scores[i];
    norm = std::sqrt(norm);
    if (norm < 1e-12) return out;  // degenerate direction, sample skipped

    Tensor dir(h.scores.shape());
    for (std::int64_t i = 0; i < dir.size(); ++i) dir[i] = h.scores[i] / norm;

    // perpendicular direction: gaussian draw orthogonalized against dir
    Tensor perp(dir.shape());
    double pnorm = 0.0;
    while (pnorm < 1e-12) {
        double proj = 0.0;
        for (std::int64_t i = 0; i < perp.size(); ++i) {
            perp[i] = rng.normal();
            proj += perp[i] * dir[i];
        }
        pnorm = 0.0;
        for (std::int64_t i = 0; i < perp.size(); ++i) {
            perp[i] -= proj * dir[i];
            pnorm += perp[i] * perp[i];
        }
        pnorm = std::sqrt(pnorm);
    }
    for (std::int64_t i = 0; i < perp.size(); ++i) perp[i] /= pnorm;

    Tensor pair_total = Tensor::scalar(0.0);
    for (int i = 0; i < cfg.atex_parallel_samples; ++i) {
        double step_i = rng.uniform(-cfg.atex_epsilon, cfg.atex_epsilon);
        Tensor xi(x.shape());
        for (std::int64_t k = 0; k < x.size(); ++k) xi[k] = x[k] + step_i * dir[k];
        Tensor teacher_logp = log_probs_const(teacher, xi);
        for (int p = 0; p < cfg.atex_perp_samples; ++p) {
            double step_p = rng.uniform(-cfg.atex_epsilon, cfg.atex_epsilon);
            Tensor xp(x.shape());
            for (std::int64_t k = 0; k < x.size(); ++k) xp[k] = xi[k] + step_p * perp[k];
            pair_total = add(pair_total, kl_to_teacher(student, params, xp, teacher_logp));
        }
    }
    out.extra_term = cfg.lambda * pair_total.item();
    out.total = add(out.total, scale(pair_total, cfg.lambda));
    return out;
}

// ---------------------------------------------------------------------------
// gradient-alignment triplet baseline

namespace {

Tensor cosine_distance_taped(const Tensor& a, const Tensor& b) {
    Tensor denom = mul(add_const(l2norm(a), kCosNormPad), add_const(l2norm(b), kCosNormPad));
    return affine(div(dot(a, b), denom), -1.0, 1.0);  // 1 - cossim
}

// soft-margin triplet on cosine distances between class gradients and the
// input point; xt must be watched on the tape under xid
Tensor iga_attr_term(Tape& tape, const Network& net, const TapedParams* params, const Tensor& xt,
                     const std::string& xid, int y) {
    Tensor logits = params ? forward_logits(net, *params, xt) : forward_logits(net, xt);
    int runner_up = -1;
    for (int c = 0; c < net.class_count; ++c) {
        if (c == y) continue;
        if (runner_up < 0 || logits[c] > logits[runner_up]) runner_up = c;
    }
    const std::array<std::string, 1> wrt{xid};
    Tensor g_true = tape.backward(pick(logits, y), wrt).grads.at(xid);
    Tensor g_rival = tape.backward(pick(logits, runner_up), wrt).grads.at(xid);
    Tensor margin = sub(cosine_distance_taped(g_rival, xt), cosine_distance_taped(g_true, xt));
    return softplus(neg(margin), 1.0);  // log(1 + exp(-margin))
}

}  // namespace

Tensor iga_attr_loss_taped(Tape& tape, const Network& net, const TapedParams* params,
                           const Tensor& x, int y) {
    std::string xid = tape.fresh_id("x");
    Tensor xt = tape.watch(x, xid);
    return iga_attr_term(tape, net, params, xt, xid, y);
}

SampleLoss iga_loss(Tape& tape, const Network& net, const TapedParams& params, const Tensor& x,
                    int y, const RunConfig& cfg, Rng& rng) {
    (void)rng;
    // inner ascent: the perturbation maximizing the triplet loss in the ball
    Tensor x_worst = x.clone();
    const double step = cfg.iga_eps_attack / std::max(1, cfg.iga_attack_steps);
    for (int it = 0; it < cfg.iga_attack_steps; ++it) {
        Tensor grad;
        {
            Tape inner(/*higher_order=*/true);
            std::string xid = inner.fresh_id("xw");
            Tensor xt = inner.watch(x_worst, xid);
            Tensor attr = iga_attr_term(inner, net, nullptr, xt, xid, y);
            if (!attr.on_tape()) break;
            const std::array<std::string, 1> wrt{xid};
            grad = inner.backward(attr, wrt).grads.at(xid).detached();
        }
        for (std::int64_t i = 0; i < x_worst.size(); ++i) {
            double s = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
            x_worst[i] = std::clamp(x_worst[i] + step * s, x[i] - cfg.iga_eps_attack,
                                    x[i] + cfg.iga_eps_attack);
        }
    }

    SampleLoss out;
    Tensor ce = cross_entropy(forward_logits(net, params, x_worst), y);
    out.ce = ce.item();
    Tensor attr = iga_attr_loss_taped(tape, net, &params, x_worst, y);
    out.extra_term = cfg.lambda * attr.item();
    out.total = add(ce, scale(attr, cfg.lambda));
    return out;
}

// ---------------------------------------------------------------------------

double test_accuracy(const Network& net, const Dataset& ds) {
    if (ds.inputs.empty()) return 0.0;
    int hits = 0;
    for (std::size_t i = 0; i < ds.inputs.size(); ++i)
        if (predict_class(net, ds.inputs[i]) == ds.labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(ds.inputs.size());
}

double lr_at_epoch(const RunConfig& cfg, int epoch) {
    double lr = cfg.optimizer.lr;
    for (int m : cfg.lr_milestones)
        if (epoch >= m) lr *= cfg.lr_decay;
    return lr;
}

TrainReport train(Network& net, const Dataset& train_ds, const Dataset& test_ds,
                  const RunConfig& cfg, const std::string& out_dir, const Network* teacher) {
    validate(cfg);
    if (cfg.reg == Regularizer::atex && teacher == nullptr)
        throw Error("train: atex needs a pretrained teacher network");
    if (train_ds.inputs.empty() && cfg.epochs > 0) throw Error("train: dataset is empty");

    TrainReport report;
    std::ofstream csv;
    if (!out_dir.empty()) {
        csv.open(out_dir + "/loss_log.csv");
        if (!csv) throw Error("train: cannot write loss log under '" + out_dir + "'");
        csv << "epoch,ce,l2_term,cos_term,acc,seconds\n";
    }

    OptimizerState opt_state;
    Rng master(cfg.seed);
    const bool higher = needs_higher_order(cfg.reg);
    const auto t_start = std::chrono::steady_clock::now();

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto e_start = std::chrono::steady_clock::now();
        Rng epoch_rng = master.fork(static_cast<std::uint64_t>(epoch));
        const double lr = lr_at_epoch(cfg, epoch);

        std::vector<std::size_t> order(train_ds.inputs.size());
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[epoch_rng.uniform_index(i)]);

        double sum_ce = 0.0, sum_l2 = 0.0, sum_cos = 0.0, sum_extra = 0.0, sum_total = 0.0;
        std::size_t seen = 0;

        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::map<std::string, Tensor> grad_sum;
            for (std::size_t k = start; k < stop; ++k) {
                const Tensor& x = train_ds.inputs[order[k]];
                const int y = train_ds.labels[order[k]];
                Tensor delta;
                if (needs_delta(cfg.reg)) {
                    PerturbationSpec ps = cfg.perturbation;
                    delta = sample_perturbation(ps, x.shape(), epoch_rng);
                }
                std::uint64_t probe_seed = cfg.reg == Regularizer::hessian ? epoch_rng.next_u64() : 0;

                Tape tape(higher);
                TapedParams params = watch_parameters(tape, net);
                SampleLoss loss;
                if (cfg.reg == Regularizer::atex)
                    loss = atex_loss(tape, *teacher, net, params, x, cfg, epoch_rng);
                else if (cfg.reg == Regularizer::iga)
                    loss = iga_loss(tape, net, params, x, y, cfg, epoch_rng);
                else
                    loss = sample_loss(tape, net, params, x, y,
                                       needs_delta(cfg.reg) ? &delta : nullptr, cfg, probe_seed);

                double total_value = loss.total.item();
                if (!std::isfinite(total_value))
                    throw Error("train: loss became non-finite at epoch " + std::to_string(epoch) +
                                " (ce=" + std::to_string(loss.ce) +
                                ", l2=" + std::to_string(loss.l2_term) +
                                ", cos=" + std::to_string(loss.cos_term) +
                                ", extra=" + std::to_string(loss.extra_term) + ")");

                GradientResult grads;
                if (loss.total.on_tape()) {
                    grads = tape.backward(loss.total, params.ids);
                }
                report.peak_tape_bytes = std::max(report.peak_tape_bytes, tape.bytes());

                for (const auto& id : params.ids) {
                    auto it = grads.grads.find(id);
                    if (it == grads.grads.end()) continue;
                    Tensor& slot = grad_sum[id];
                    if (!slot.defined()) slot = Tensor::zeros(it->second.shape());
                    for (std::int64_t i = 0; i < slot.size(); ++i) slot[i] += it->second[i];
                }
                sum_ce += loss.ce;
                sum_l2 += loss.l2_term;
                sum_cos += loss.cos_term;
                sum_extra += loss.extra_term;
                sum_total += total_value;
                ++seen;
            }
            const double inv = 1.0 / static_cast<double>(stop - start);
            for (auto& [id, g] : grad_sum)
                for (std::int64_t i = 0; i < g.size(); ++i) g[i] *= inv;
            optimizer_step(net, grad_sum, opt_state, cfg.optimizer, lr);
        }

        EpochStats stats;
        stats.epoch = epoch;
        const double inv_seen = seen ? 1.0 / static_cast<double>(seen) : 0.0;
        stats.ce = sum_ce * inv_seen;
        stats.l2_term = sum_l2 * inv_seen;
        stats.cos_term = sum_cos * inv_seen;
        stats.extra_term = sum_extra * inv_seen;
        stats.total = sum_total * inv_seen;
        stats.lr = lr;
        stats.test_accuracy = test_accuracy(net, test_ds);
        stats.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - e_start).count();
        report.epochs.push_back(stats);
        if (csv.is_open()) {
            char line[256];
            std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g,%.17g,%.6f\n", epoch, stats.ce,
                          stats.l2_term, stats.cos_term, stats.test_accuracy, stats.seconds);
            csv << line;
        }
    }

    report.total_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    report.final_test_accuracy = test_accuracy(net, test_ds);
    if (!out_dir.empty()) {
        report.checkpoint_path = out_dir + "/checkpoint.bin";
        save_checkpoint(net, report.checkpoint_path);
    }
    return report;
}

const char* regularizer_name(Regularizer r) {
    switch (r) {
        case Regularizer::ce: return "ce";
        case Regularizer::hessian: return "hessian";
        case Regularizer::l2: return "l2";
        case Regularizer::cos: return "cos";
        case Regularizer::l2cos: return "l2cos";
        case Regularizer::maxent: return "maxent";
        case Regularizer::atex: return "atex";
        case Regularizer::iga: return "iga";
    }
    return "?";
}

Regularizer regularizer_from_name(const std::string& s) {
    if (s == "ce") return Regularizer::ce;
    if (s == "hessian") return Regularizer::hessian;
    if (s == "l2") return Regularizer::l2;
    if (s == "cos") return Regularizer::cos;
    if (s == "l2cos") return Regularizer::l2cos;
    if (s == "maxent") return Regularizer::maxent;
    if (s == "atex") return Regularizer::atex;
    if (s == "iga") return Regularizer::iga;
    throw Error("unknown regularizer '" + s + "'");
}

}  // namespace gradalign
