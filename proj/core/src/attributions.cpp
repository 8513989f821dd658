#include "gradalign/attributions.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "gradalign/ops.hpp"
#include "gradalign/rng.hpp"
#include "gradalign/tape.hpp"

namespace gradalign {

namespace {

Tensor plain_gradient(const Network& net, const Tensor& x, int y, bool guided) {
    Tape tape(/*higher_order=*/false);
    Tensor xt = tape.watch(x, "x");
    Tensor logits = forward_logits(net, xt);
    const std::array<std::string, 1> wrt{"x"};
    BackwardOptions opts;
    opts.guided = guided;
    return tape.backward(pick(logits, y), wrt, opts).grads.at("x").detached();
}

}  // namespace

AttributionMap grad_attr(const Network& net, const Tensor& x, int y) {
    return {plain_gradient(net, x, y, false), AttrMethod::grad, y, std::nullopt};
}

AttributionMap input_x_grad_attr(const Network& net, const Tensor& x, int y) {
    Tensor g = plain_gradient(net, x, y, false);
    Tensor s(x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i) s[i] = x[i] * g[i];
    return {std::move(s), AttrMethod::input_x_grad, y, std::nullopt};
}

AttributionMap guided_backprop_attr(const Network& net, const Tensor& x, int y) {
    return {plain_gradient(net, x, y, true), AttrMethod::guided_backprop, y, std::nullopt};
}

Tensor grad_attr_taped(Tape& tape, const Network& net, const Tensor& x_taped,
                       const std::string& x_id, int y) {
    Tensor logits = forward_logits(net, x_taped);
    const std::array<std::string, 1> wrt{x_id};
    return tape.backward(pick(logits, y), wrt).grads.at(x_id);
}

Tensor input_x_grad_attr_taped(Tape& tape, const Network& net, const Tensor& x_taped,
                               const std::string& x_id, int y) {
    return mul(x_taped, grad_attr_taped(tape, net, x_taped, x_id, y));
}

Tensor guided_backprop_attr_taped(Tape& tape, const Network& net, const Tensor& x_taped,
                                  const std::string& x_id, int y) {
    Tensor logits = forward_logits(net, x_taped);
    const std::array<std::string, 1> wrt{x_id};
    BackwardOptions opts;
    opts.guided = true;
    return tape.backward(pick(logits, y), wrt, opts).grads.at(x_id);
}

bool attack_differentiable(AttrMethod m) {
    return m == AttrMethod::grad || m == AttrMethod::input_x_grad ||
           m == AttrMethod::guided_backprop;
}

AttributionMap smoothgrad_attr(const Network& net, const Tensor& x, int y, double sigma,
                               int n_samples, std::uint64_t seed) {
    if (sigma < 0.0) throw Error("smoothgrad: sigma must be nonnegative");
    if (n_samples < 1) throw Error("smoothgrad: need at least one sample");
    Rng rng(seed);
    Tensor acc(x.shape());
    for (int s = 0; s < n_samples; ++s) {
        Tensor xs(x.shape());
        for (std::int64_t i = 0; i < x.size(); ++i) xs[i] = x[i] + sigma * rng.normal();
        Tensor g = plain_gradient(net, xs, y, false);
        for (std::int64_t i = 0; i < x.size(); ++i) acc[i] += g[i];
    }
    for (std::int64_t i = 0; i < x.size(); ++i) acc[i] /= n_samples;
    return {std::move(acc), AttrMethod::smoothgrad, y, std::nullopt};
}

// ---------------------------------------------------------------------------
// Relevance propagation

namespace {

constexpr double kLrpZeroDenom = 1e-9;

// leaves healthy denominators untouched so per-layer sums stay conserved
double stabilize(double d) {
    if (std::abs(d) >= kLrpZeroDenom) return d;
    return d < 0.0 ? -kLrpZeroDenom : kLrpZeroDenom;
}

Tensor clamp_pos(const Tensor& w) {
    Tensor out(w.shape());
    for (std::int64_t i = 0; i < w.size(); ++i) out[i] = w[i] > 0.0 ? w[i] : 0.0;
    return out;
}

Tensor clamp_neg(const Tensor& w) {
    Tensor out(w.shape());
    for (std::int64_t i = 0; i < w.size(); ++i) out[i] = w[i] < 0.0 ? w[i] : 0.0;
    return out;
}

Tensor bounds_image(const Shape& shape, const std::vector<double>& per_channel) {
    Tensor img(shape);
    if (shape.size() == 3) {
        if (per_channel.size() != static_cast<std::size_t>(shape[0]))
            throw Error("lrp: expected " + std::to_string(shape[0]) + " channel bounds, got " +
                        std::to_string(per_channel.size()));
        std::int64_t hw = static_cast<std::int64_t>(shape[1]) * shape[2];
        for (int c = 0; c < shape[0]; ++c)
            for (std::int64_t i = 0; i < hw; ++i) img[c * hw + i] = per_channel[c];
    } else {
        if (per_channel.empty()) throw Error("lrp: input bounds are empty");
        for (std::int64_t i = 0; i < img.size(); ++i) img[i] = per_channel[0];
    }
    return img;
}

// relevance through a dense layer with the positive-weight rule
Tensor lrp_dense_zplus(const Tensor& a, const Tensor& w, const Tensor& r_out) {
    const int out = w.shape()[0], in = w.shape()[1];
    std::vector<double> denom(static_cast<std::size_t>(out), 0.0);
    for (int j = 0; j < out; ++j) {
        double acc = 0.0;
        for (int i = 0; i < in; ++i) {
            double wij = w[static_cast<std::int64_t>(j) * in + i];
            if (wij > 0.0) acc += a[i] * wij;
        }
        denom[static_cast<std::size_t>(j)] = acc;
    }
    Tensor r_in(Shape{in});
    for (int j = 0; j < out; ++j) {
        double f = r_out[j] / stabilize(denom[static_cast<std::size_t>(j)]);
        for (int i = 0; i < in; ++i) {
            double wij = w[static_cast<std::int64_t>(j) * in + i];
            if (wij > 0.0) r_in[i] += a[i] * wij * f;
        }
    }
    return r_in;
}

// relevance through the first dense layer, bounded by the input domain
Tensor lrp_dense_zb(const Tensor& x, const Tensor& w, const Tensor& r_out, const Tensor& lo,
                    const Tensor& hi) {
    const int out = w.shape()[0], in = w.shape()[1];
    Tensor r_in(Shape{in});
    for (int j = 0; j < out; ++j) {
        double denom = 0.0;
        for (int i = 0; i < in; ++i) {
            double wij = w[static_cast<std::int64_t>(j) * in + i];
            double wp = wij > 0.0 ? wij : 0.0;
            double wn = wij < 0.0 ? wij : 0.0;
            denom += x[i] * wij - lo[i] * wp - hi[i] * wn;
        }
        double f = r_out[j] / stabilize(denom);
        for (int i = 0; i < in; ++i) {
            double wij = w[static_cast<std::int64_t>(j) * in + i];
            double wp = wij > 0.0 ? wij : 0.0;
            double wn = wij < 0.0 ? wij : 0.0;
            r_in[i] += (x[i] * wij - lo[i] * wp - hi[i] * wn) * f;
        }
    }
    return r_in;
}

Tensor safe_ratio(const Tensor& r, const Tensor& z) {
    Tensor t(r.shape());
    for (std::int64_t i = 0; i < r.size(); ++i) t[i] = r[i] / stabilize(z[i]);
    return t;
}

Tensor lrp_conv_zplus(const Tensor& a, const Tensor& w, int pad, const Tensor& r_out) {
    NoRecord plain;
    Tensor wp = clamp_pos(w);
    Tensor z = conv2d(a, wp, pad);
    Tensor t = safe_ratio(r_out, z);
    Tensor c = conv2d_input_grad(t, wp, pad, a.shape());
    return mul(a, c);
}

Tensor lrp_conv_zb(const Tensor& x, const Tensor& w, int pad, const Tensor& r_out,
                   const Tensor& lo_img, const Tensor& hi_img) {
    NoRecord plain;
    Tensor wp = clamp_pos(w);
    Tensor wn = clamp_neg(w);
    Tensor z = sub(sub(conv2d(x, w, pad), conv2d(lo_img, wp, pad)), conv2d(hi_img, wn, pad));
    Tensor t = safe_ratio(r_out, z);
    Tensor r = sub(sub(mul(x, conv2d_input_grad(t, w, pad, x.shape())),
                       mul(lo_img, conv2d_input_grad(t, wp, pad, x.shape()))),
                   mul(hi_img, conv2d_input_grad(t, wn, pad, x.shape())));
    return r;
}

// winner-take-all routing, first maximal element of each window
Tensor lrp_maxpool(const Tensor& a, int k, const Tensor& r_out) {
    const int C = a.shape()[0], H = a.shape()[1], W = a.shape()[2];
    const int OH = H / k, OW = W / k;
    Tensor r_in(a.shape());
    for (int c = 0; c < C; ++c) {
        for (int i = 0; i < OH; ++i) {
            for (int j = 0; j < OW; ++j) {
                double best = -1e308;
                std::int64_t best_at = -1;
                for (int u = 0; u < k; ++u) {
                    for (int v = 0; v < k; ++v) {
                        std::int64_t flat =
                            (static_cast<std::int64_t>(c) * H + i * k + u) * W + j * k + v;
                        if (a[flat] > best) {
                            best = a[flat];
                            best_at = flat;
                        }
                    }
                }
                r_in[best_at] += r_out[(static_cast<std::int64_t>(c) * OH + i) * OW + j];
            }
        }
    }
    return r_in;
}

}  // namespace

AttributionMap lrp_attr(const Network& net, const Tensor& x, int y, const std::vector<double>& lo,
                        const std::vector<double>& hi, std::vector<double>* layer_sums) {
    NoRecord plain;

    // forward, keeping each layer's input
    std::vector<Tensor> inputs;
    inputs.reserve(net.layers.size());
    Tensor h = x;
    for (const auto& l : net.layers) {
        inputs.push_back(h);
        switch (l.spec.kind) {
            case LayerKind::dense:
                h = matmul(l.weight, h);
                if (l.spec.has_bias) h = add(h, l.bias);
                break;
            case LayerKind::conv2d:
                h = conv2d(h, l.weight, l.spec.pad);
                if (l.spec.has_bias) h = add(h, channel_broadcast(l.bias, h.shape()));
                break;
            case LayerKind::maxpool2d: h = maxpool2d(h, l.spec.pool); break;
            case LayerKind::flatten: h = flatten(h); break;
        }
        if (l.spec.activated) {
            h = net.activation == Activation::relu
                    ? relu(h)
                    : (net.activation == Activation::softplus ? softplus(h, net.beta) : h);
        }
    }
    if (y < 0 || y >= net.class_count)
        throw Error("lrp: class " + std::to_string(y) + " out of range");

    // first parameterized layer receives the domain-bounded rule
    int first_param = -1;
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        if (net.layers[i].parameterized()) {
            first_param = static_cast<int>(i);
            break;
        }
    if (first_param < 0) throw Error("lrp: network has no parameterized layers");

    Tensor r = Tensor::zeros({net.class_count});
    r[y] = 1.0;
    auto note_sum = [&]() {
        if (!layer_sums) return;
        double total = 0.0;
        for (std::int64_t i = 0; i < r.size(); ++i) total += r[i];
        layer_sums->push_back(total);
    };
    note_sum();

    for (int i = static_cast<int>(net.layers.size()) - 1; i >= 0; --i) {
        const Layer& l = net.layers[i];
        const Tensor& a = inputs[static_cast<std::size_t>(i)];
        switch (l.spec.kind) {
            case LayerKind::dense:
                if (i == first_param) {
                    Tensor lo_t = bounds_image(a.shape(), lo);
                    Tensor hi_t = bounds_image(a.shape(), hi);
                    r = lrp_dense_zb(a, l.weight, r, lo_t, hi_t);
                } else {
                    r = lrp_dense_zplus(a, l.weight, r);
                }
                break;
            case LayerKind::conv2d:
                if (i == first_param) {
                    Tensor lo_t = bounds_image(a.shape(), lo);
                    Tensor hi_t = bounds_image(a.shape(), hi);
                    r = lrp_conv_zb(a, l.weight, l.spec.pad, r, lo_t, hi_t);
                } else {
                    r = lrp_conv_zplus(a, l.weight, l.spec.pad, r);
                }
                break;
            case LayerKind::maxpool2d: r = lrp_maxpool(a, l.spec.pool, r); break;
            case LayerKind::flatten: r = reshape(r, a.shape()); break;
        }
        note_sum();
    }
    return {std::move(r), AttrMethod::lrp, y, std::nullopt};
}

AttributionMap compute_attribution(const Network& net, const Tensor& x, int y, AttrMethod method,
                                   const AttrOptions& opts) {
    switch (method) {
        case AttrMethod::grad: return grad_attr(net, x, y);
        case AttrMethod::input_x_grad: return input_x_grad_attr(net, x, y);
        case AttrMethod::guided_backprop: return guided_backprop_attr(net, x, y);
        case AttrMethod::lrp: return lrp_attr(net, x, y, opts.lo, opts.hi);
        case AttrMethod::smoothgrad:
            return smoothgrad_attr(net, x, y, opts.smoothgrad_sigma, opts.smoothgrad_samples,
                                   opts.seed);
    }
    throw Error("compute_attribution: unknown method");
}

AttributionMap normalize_map(const AttributionMap& map, NormScheme scheme) {
    const Tensor& s = map.scores;
    Tensor out(s.shape());
    switch (scheme) {
        case NormScheme::l2_unit: {
            double norm = 0.0;
            for (std::int64_t i = 0; i < s.size(); ++i) norm += s[i] * s[i];
            norm = std::sqrt(norm);
            if (norm <= 1e-12)
                throw Error("normalize_map: map is degenerate under l2_unit (norm " +
                            std::to_string(norm) + ")");
            for (std::int64_t i = 0; i < s.size(); ++i) out[i] = s[i] / norm;
            break;
        }
        case NormScheme::minmax_255: {
            double mn = s[0], mx = s[0];
            for (std::int64_t i = 1; i < s.size(); ++i) {
                mn = std::min(mn, s[i]);
                mx = std::max(mx, s[i]);
            }
            if (mx > mn)
                for (std::int64_t i = 0; i < s.size(); ++i)
                    out[i] = (s[i] - mn) / (mx - mn) * 255.0;
            break;  // constant map stays all-zero
        }
        case NormScheme::abs_sum_1: {
            double total = 0.0;
            for (std::int64_t i = 0; i < s.size(); ++i) total += std::abs(s[i]);
            if (total > 0.0)
                for (std::int64_t i = 0; i < s.size(); ++i) out[i] = s[i] / total;
            break;
        }
    }
    return {std::move(out), map.method, map.class_index, scheme};
}

namespace {

// collapse channels so the heatmap is spatial
Tensor spatial_view(const Tensor& s) {
    if (s.shape().size() == 3) {
        const int C = s.shape()[0], H = s.shape()[1], W = s.shape()[2];
        Tensor out(Shape{H, W});
        for (int c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i)
                out[i] += s[c * static_cast<std::int64_t>(H) * W + i];
        return out;
    }
    if (s.shape().size() == 2) return s.clone();
    Tensor out(Shape{1, static_cast<int>(s.size())});
    for (std::int64_t i = 0; i < s.size(); ++i) out[i] = s[i];
    return out;
}

}  // namespace

void export_heatmap(const AttributionMap& map, const std::string& path_base) {
    AttributionMap mm = normalize_map({spatial_view(map.scores), map.method, map.class_index, {}},
                                      NormScheme::minmax_255);
    const int H = mm.scores.shape()[0], W = mm.scores.shape()[1];
    {
        std::ofstream os(path_base + ".pgm", std::ios::binary);
        if (!os) throw Error("export_heatmap: cannot write '" + path_base + ".pgm'");
        os << "P5\n" << W << " " << H << "\n255\n";
        for (std::int64_t i = 0; i < mm.scores.size(); ++i) {
            unsigned char b = static_cast<unsigned char>(
                std::clamp(std::lround(mm.scores[i]), 0l, 255l));
            os.write(reinterpret_cast<const char*>(&b), 1);
        }
    }
    {
        std::ofstream os(path_base + ".f64", std::ios::binary);
        os.write(reinterpret_cast<const char*>(map.scores.data()),
                 static_cast<std::streamsize>(map.scores.size() * sizeof(double)));
    }
    {
        std::ofstream os(path_base + ".txt");
        os << "shape";
        for (int d : map.scores.shape()) os << " " << d;
        os << "\nmethod " << attr_method_name(map.method);
        os << "\nclass " << map.class_index;
        os << "\nnormalization "
           << (map.normalized ? norm_scheme_name(*map.normalized) : "none") << "\n";
    }
}

const char* attr_method_name(AttrMethod m) {
    switch (m) {
        case AttrMethod::grad: return "grad";
        case AttrMethod::input_x_grad: return "xgrad";
        case AttrMethod::guided_backprop: return "gbp";
        case AttrMethod::lrp: return "lrp";
        case AttrMethod::smoothgrad: return "smoothgrad";
    }
    return "?";
}

AttrMethod attr_method_from_name(const std::string& s) {
    if (s == "grad") return AttrMethod::grad;
    if (s == "xgrad") return AttrMethod::input_x_grad;
    if (s == "gbp") return AttrMethod::guided_backprop;
    if (s == "lrp") return AttrMethod::lrp;
    if (s == "smoothgrad") return AttrMethod::smoothgrad;
    throw Error("unknown attribution method '" + s + "'");
}

const char* norm_scheme_name(NormScheme s) {
    switch (s) {
        case NormScheme::l2_unit: return "l2_unit";
        case NormScheme::minmax_255: return "minmax_255";
        case NormScheme::abs_sum_1: return "abs_sum_1";
    }
    return "?";
}

NormScheme norm_scheme_from_name(const std::string& s) {
    if (s == "l2_unit") return NormScheme::l2_unit;
    if (s == "minmax_255") return NormScheme::minmax_255;
    if (s == "abs_sum_1") return NormScheme::abs_sum_1;
    throw Error("unknown normalization scheme '" + s + "'");
}

}  // namespace gradalign
