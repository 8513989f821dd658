#include "gradalign/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "gradalign/tape.hpp"

namespace gradalign {

namespace {

void check_inputs_belong_here(const Tape* t, const Tensor& a, const Tensor& b, const char* op) {
    auto chk = [&](const Tensor& x) {
        if (x.defined() && x.on_tape() && x.owner() != t)
            throw Error(std::string(op) + ": input is bound to a different tape; pass it via detached()");
    };
    chk(a);
    chk(b);
}

// Record the node if a tape is active and any input participates in it.
Tensor finish(Node&& n, const char* op) {
    Tape* t = Tape::active();
    if (t != nullptr) {
        check_inputs_belong_here(t, n.a, n.b, op);
        bool any_taped = (n.a.defined() && n.a.on_tape()) || (n.b.defined() && n.b.on_tape());
        if (any_taped) {
            int id = t->record(std::move(n));
            return t->node(id).out;
        }
    }
    return std::move(n.out);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
}

Tensor elementwise(Op kind, const char* name, const Tensor& a, const Tensor& b,
                   double (*f)(double, double)) {
    require_same_shape(name, a, b);
    Tensor out(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < a.size(); ++i) po[i] = f(pa[i], pb[i]);
    Node n;
    n.op = kind;
    n.a = a;
    n.b = b;
    n.out = std::move(out);
    return finish(std::move(n), name);
}

constexpr double kExpClamp = 709.0;      // exp stays finite
constexpr double kLogFloor = 1e-300;     // log stays finite

double stable_exp(double x) { return std::exp(std::min(x, kExpClamp)); }

double stable_sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace

std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::mul: return "mul";
        case Op::div: return "div";
        case Op::affine: return "affine";
        case Op::matmul: return "matmul";
        case Op::matvec: return "matvec";
        case Op::transpose2d: return "transpose";
        case Op::reshape: return "reshape";
        case Op::conv2d: return "conv2d";
        case Op::conv2d_igrad: return "conv2d_igrad";
        case Op::conv2d_wgrad: return "conv2d_wgrad";
        case Op::maxpool2d: return "maxpool2d";
        case Op::pool_gather: return "pool_gather";
        case Op::pool_scatter: return "pool_scatter";
        case Op::relu: return "relu";
        case Op::softplus: return "softplus";
        case Op::sigmoid: return "sigmoid";
        case Op::softmax_vec: return "softmax";
        case Op::log: return "log";
        case Op::exp: return "exp";
        case Op::sqrt: return "sqrt";
        case Op::l2norm: return "l2norm";
        case Op::sum_all: return "sum";
        case Op::broadcast_scalar: return "broadcast_scalar";
        case Op::channel_sum: return "channel_sum";
        case Op::channel_broadcast: return "channel_broadcast";
        case Op::pick: return "pick";
        case Op::scatter_at: return "scatter_at";
    }
    return "?";
}

Tensor add(const Tensor& a, const Tensor& b) {
    return elementwise(Op::add, "add", a, b, [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return elementwise(Op::sub, "sub", a, b, [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return elementwise(Op::mul, "mul", a, b, [](double x, double y) { return x * y; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return elementwise(Op::div, "div", a, b, [](double x, double y) { return x / y; });
}

Tensor affine(const Tensor& x, double s, double c) {
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < x.size(); ++i) po[i] = s * px[i] + c;
    Node n;
    n.op = Op::affine;
    n.a = x;
    n.c0 = s;
    n.c1 = c;
    n.out = std::move(out);
    return finish(std::move(n), "affine");
}

Tensor scale(const Tensor& x, double s) { return affine(x, s, 0.0); }
Tensor add_const(const Tensor& x, double c) { return affine(x, 1.0, c); }
Tensor neg(const Tensor& x) { return affine(x, -1.0, 0.0); }

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2)
        throw Error("matmul: left operand must be rank 2, got " + shape_str(a.shape()));
    const int m = a.shape()[0];
    const int k = a.shape()[1];
    if (b.shape().size() == 1) {
        if (b.shape()[0] != k)
            throw Error("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
        Tensor out(Shape{m});
        const double* pa = a.data();
        const double* pb = b.data();
        double* po = out.data();
        for (int i = 0; i < m; ++i) {
            double acc = 0.0;
            const double* row = pa + static_cast<std::int64_t>(i) * k;
            for (int j = 0; j < k; ++j) acc += row[j] * pb[j];
            po[i] = acc;
        }
        Node n;
        n.op = Op::matvec;
        n.a = a;
        n.b = b;
        n.out = std::move(out);
        return finish(std::move(n), "matmul");
    }
    if (b.shape().size() != 2 || b.shape()[0] != k)
        throw Error("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
    const int p = b.shape()[1];
    Tensor out(Shape{m, p});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < p; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += pa[i * k + t] * pb[t * p + j];
            po[i * p + j] = acc;
        }
    }
    Node n;
    n.op = Op::matmul;
    n.a = a;
    n.b = b;
    n.out = std::move(out);
    return finish(std::move(n), "matmul");
}

Tensor transpose(const Tensor& a) {
    if (a.shape().size() != 2)
        throw Error("transpose: expected rank 2, got " + shape_str(a.shape()));
    const int m = a.shape()[0];
    const int k = a.shape()[1];
    Tensor out(Shape{k, m});
    const double* pa = a.data();
    double* po = out.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j) po[j * m + i] = pa[i * k + j];
    Node n;
    n.op = Op::transpose2d;
    n.a = a;
    n.out = std::move(out);
    return finish(std::move(n), "transpose");
}

Tensor reshape(const Tensor& x, Shape target) {
    if (numel(target) != x.size())
        throw Error("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(target));
    Tensor out(target, std::vector<double>(x.data(), x.data() + x.size()));
    Node n;
    n.op = Op::reshape;
    n.a = x;
    n.shape_attr = std::move(target);
    n.out = std::move(out);
    return finish(std::move(n), "reshape");
}

Tensor flatten(const Tensor& x) {
    return reshape(x, Shape{static_cast<int>(x.size())});
}

namespace {

void conv2d_forward_raw(const double* x, int C, int H, int W, const double* w, int OC, int kh,
                        int kw, int pad, double* y, int OH, int OW) {
    for (int oc = 0; oc < OC; ++oc) {
        for (int i = 0; i < OH; ++i) {
            for (int j = 0; j < OW; ++j) {
                double acc = 0.0;
                for (int ic = 0; ic < C; ++ic) {
                    const double* xc = x + static_cast<std::int64_t>(ic) * H * W;
                    const double* wc =
                        w + ((static_cast<std::int64_t>(oc) * C + ic) * kh) * kw;
                    for (int u = 0; u < kh; ++u) {
                        int r = i + u - pad;
                        if (r < 0 || r >= H) continue;
                        for (int v = 0; v < kw; ++v) {
                            int c = j + v - pad;
                            if (c < 0 || c >= W) continue;
                            acc += xc[r * W + c] * wc[u * kw + v];
                        }
                    }
                }
                y[(static_cast<std::int64_t>(oc) * OH + i) * OW + j] = acc;
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int pad) {
    if (x.shape().size() != 3 || w.shape().size() != 4 || x.shape()[0] != w.shape()[1])
        throw Error("conv2d: shape mismatch " + shape_str(x.shape()) + " vs kernel " +
                    shape_str(w.shape()));
    const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    const int OC = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    const int OH = H + 2 * pad - kh + 1;
    const int OW = W + 2 * pad - kw + 1;
    if (OH <= 0 || OW <= 0)
        throw Error("conv2d: kernel " + shape_str(w.shape()) + " too large for input " +
                    shape_str(x.shape()));
    Tensor out(Shape{OC, OH, OW});
    conv2d_forward_raw(x.data(), C, H, W, w.data(), OC, kh, kw, pad, out.data(), OH, OW);
    Node n;
    n.op = Op::conv2d;
    n.a = x;
    n.b = w;
    n.pad = pad;
    n.out = std::move(out);
    return finish(std::move(n), "conv2d");
}

Tensor conv2d_input_grad(const Tensor& gout, const Tensor& w, int pad, const Shape& input_shape) {
    if (gout.shape().size() != 3 || w.shape().size() != 4 || input_shape.size() != 3 ||
        gout.shape()[0] != w.shape()[0] || input_shape[0] != w.shape()[1])
        throw Error("conv2d_igrad: shape mismatch " + shape_str(gout.shape()) + " vs kernel " +
                    shape_str(w.shape()));
    const int C = input_shape[0], H = input_shape[1], W = input_shape[2];
    const int OC = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    const int OH = gout.shape()[1], OW = gout.shape()[2];
    Tensor out(input_shape);
    const double* g = gout.data();
    const double* pw = w.data();
    double* po = out.data();
    for (int ic = 0; ic < C; ++ic) {
        for (int a = 0; a < H; ++a) {
            for (int b = 0; b < W; ++b) {
                double acc = 0.0;
                for (int oc = 0; oc < OC; ++oc) {
                    const double* gc = g + static_cast<std::int64_t>(oc) * OH * OW;
                    const double* wc =
                        pw + ((static_cast<std::int64_t>(oc) * C + ic) * kh) * kw;
                    for (int u = 0; u < kh; ++u) {
                        int i = a - u + pad;
                        if (i < 0 || i >= OH) continue;
                        for (int v = 0; v < kw; ++v) {
                            int j = b - v + pad;
                            if (j < 0 || j >= OW) continue;
                            acc += gc[i * OW + j] * wc[u * kw + v];
                        }
                    }
                }
                po[(static_cast<std::int64_t>(ic) * H + a) * W + b] = acc;
            }
        }
    }
    Node n;
    n.op = Op::conv2d_igrad;
    n.a = gout;
    n.b = w;
    n.pad = pad;
    n.shape_attr = input_shape;
    n.out = std::move(out);
    return finish(std::move(n), "conv2d_igrad");
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& gout, int pad, const Shape& weight_shape) {
    if (x.shape().size() != 3 || gout.shape().size() != 3 || weight_shape.size() != 4 ||
        weight_shape[1] != x.shape()[0] || weight_shape[0] != gout.shape()[0])
        throw Error("conv2d_wgrad: shape mismatch " + shape_str(x.shape()) + " vs " +
                    shape_str(gout.shape()));
    const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    const int OC = weight_shape[0], kh = weight_shape[2], kw = weight_shape[3];
    const int OH = gout.shape()[1], OW = gout.shape()[2];
    Tensor out(weight_shape);
    const double* px = x.data();
    const double* g = gout.data();
    double* po = out.data();
    for (int oc = 0; oc < OC; ++oc) {
        for (int ic = 0; ic < C; ++ic) {
            const double* xc = px + static_cast<std::int64_t>(ic) * H * W;
            const double* gc = g + static_cast<std::int64_t>(oc) * OH * OW;
            for (int u = 0; u < kh; ++u) {
                for (int v = 0; v < kw; ++v) {
                    double acc = 0.0;
                    for (int i = 0; i < OH; ++i) {
                        int r = i + u - pad;
                        if (r < 0 || r >= H) continue;
                        for (int j = 0; j < OW; ++j) {
                            int c = j + v - pad;
                            if (c < 0 || c >= W) continue;
                            acc += xc[r * W + c] * gc[i * OW + j];
                        }
                    }
                    po[((static_cast<std::int64_t>(oc) * C + ic) * kh + u) * kw + v] = acc;
                }
            }
        }
    }
    Node n;
    n.op = Op::conv2d_wgrad;
    n.a = x;
    n.b = gout;
    n.pad = pad;
    n.shape_attr = weight_shape;
    n.out = std::move(out);
    return finish(std::move(n), "conv2d_wgrad");
}

Tensor maxpool2d(const Tensor& x, int k) {
    if (x.shape().size() != 3)
        throw Error("maxpool2d: expected [C,H,W], got " + shape_str(x.shape()));
    if (k < 1) throw Error("maxpool2d: kernel must be positive");
    const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    const int OH = H / k, OW = W / k;
    if (OH == 0 || OW == 0)
        throw Error("maxpool2d: kernel " + std::to_string(k) + " too large for input " +
                    shape_str(x.shape()));
    Tensor out(Shape{C, OH, OW});
    auto idx = std::make_shared<std::vector<std::int32_t>>(static_cast<std::size_t>(C) * OH * OW);
    const double* px = x.data();
    double* po = out.data();
    for (int c = 0; c < C; ++c) {
        for (int i = 0; i < OH; ++i) {
            for (int j = 0; j < OW; ++j) {
                double best = -1e308;
                std::int32_t best_at = -1;
                // first maximal element in row-major window order wins ties
                for (int u = 0; u < k; ++u) {
                    for (int v = 0; v < k; ++v) {
                        std::int32_t flat =
                            static_cast<std::int32_t>((static_cast<std::int64_t>(c) * H + i * k + u) * W +
                                                      j * k + v);
                        double val = px[flat];
                        if (val > best) {
                            best = val;
                            best_at = flat;
                        }
                    }
                }
                std::int64_t o = (static_cast<std::int64_t>(c) * OH + i) * OW + j;
                po[o] = best;
                (*idx)[static_cast<std::size_t>(o)] = best_at;
            }
        }
    }
    Node n;
    n.op = Op::maxpool2d;
    n.a = x;
    n.pool = k;
    n.indices = std::move(idx);
    n.out = std::move(out);
    return finish(std::move(n), "maxpool2d");
}

Tensor pool_gather(const Tensor& x, const std::shared_ptr<std::vector<std::int32_t>>& idx,
                   const Shape& pooled_shape) {
    Tensor out(pooled_shape);
    const double* px = x.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = px[(*idx)[static_cast<std::size_t>(i)]];
    Node n;
    n.op = Op::pool_gather;
    n.a = x;
    n.indices = idx;
    n.shape_attr = pooled_shape;
    n.out = std::move(out);
    return finish(std::move(n), "pool_gather");
}

Tensor pool_scatter(const Tensor& s, const std::shared_ptr<std::vector<std::int32_t>>& idx,
                    const Shape& full_shape) {
    Tensor out(full_shape);
    const double* ps = s.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < s.size(); ++i) po[(*idx)[static_cast<std::size_t>(i)]] += ps[i];
    Node n;
    n.op = Op::pool_scatter;
    n.a = s;
    n.indices = idx;
    n.shape_attr = full_shape;
    n.out = std::move(out);
    return finish(std::move(n), "pool_scatter");
}

Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < x.size(); ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
    Node n;
    n.op = Op::relu;
    n.a = x;
    n.out = std::move(out);
    return finish(std::move(n), "relu");
}

Tensor softplus(const Tensor& x, double beta) {
    if (beta <= 0.0) throw Error("softplus: beta must be positive");
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < x.size(); ++i) {
        double z = beta * px[i];
        // max(z,0)/beta + log1p(exp(-|z|))/beta, overflow-safe
        po[i] = (z > 0.0 ? z : 0.0) / beta + std::log1p(std::exp(-std::abs(z))) / beta;
    }
    Node n;
    n.op = Op::softplus;
    n.a = x;
    n.c0 = beta;
    n.out = std::move(out);
    return finish(std::move(n), "softplus");
}

Tensor sigmoid(const Tensor& x, double beta) {
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < x.size(); ++i) po[i] = stable_sigmoid(beta * px[i]);
    Node n;
    n.op = Op::sigmoid;
    n.a = x;
    n.c0 = beta;
    n.out = std::move(out);
    return finish(std::move(n), "sigmoid");
}

Tensor softmax(const Tensor& x) {
    if (x.shape().size() != 1)
        throw Error("softmax: expected a vector, got " + shape_str(x.shape()));
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    double m = px[0];
    for (std::int64_t i = 1; i < x.size(); ++i) m = std::max(m, px[i]);
    double total = 0.0;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        po[i] = stable_exp(px[i] - m);
        total += po[i];
    }
    for (std::int64_t i = 0; i < x.size(); ++i) po[i] /= total;
    Node n;
    n.op = Op::softmax_vec;
    n.a = x;
    n.out = std::move(out);
    return finish(std::move(n), "softmax");
}

Tensor log(const Tensor& x) {
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < x.size(); ++i) po[i] = std::log(std::max(px[i], kLogFloor));
    Node n;
    n.op = Op::log;
    n.a = x;
    n.out = std::move(out);
    return finish(std::move(n), "log");
}

Tensor exp(const Tensor& x) {
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < x.size(); ++i) po[i] = stable_exp(px[i]);
    Node n;
    n.op = Op::exp;
    n.a = x;
    n.out = std::move(out);
    return finish(std::move(n), "exp");
}

Tensor sqrt(const Tensor& x) {
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < x.size(); ++i) po[i] = std::sqrt(px[i]);
    Node n;
    n.op = Op::sqrt;
    n.a = x;
    n.out = std::move(out);
    return finish(std::move(n), "sqrt");
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    const double* px = x.data();
    for (std::int64_t i = 0; i < x.size(); ++i) acc += px[i];
    Node n;
    n.op = Op::sum_all;
    n.a = x;
    n.out = Tensor::scalar(acc);
    return finish(std::move(n), "sum");
}

Tensor mean(const Tensor& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor dot(const Tensor& a, const Tensor& b) {
    require_same_shape("dot", a, b);
    return sum(mul(a, b));
}

Tensor l2norm(const Tensor& v) {
    double acc = 0.0;
    const double* pv = v.data();
    for (std::int64_t i = 0; i < v.size(); ++i) acc += pv[i] * pv[i];
    Node n;
    n.op = Op::l2norm;
    n.a = v;
    n.out = Tensor::scalar(std::sqrt(acc));
    return finish(std::move(n), "l2norm");
}

Tensor broadcast_scalar(const Tensor& s, Shape target) {
    if (s.size() != 1)
        throw Error("broadcast_scalar: expected a scalar, got " + shape_str(s.shape()));
    Tensor out = Tensor::full(target, s.item());
    Node n;
    n.op = Op::broadcast_scalar;
    n.a = s;
    n.shape_attr = std::move(target);
    n.out = std::move(out);
    return finish(std::move(n), "broadcast_scalar");
}

Tensor channel_sum(const Tensor& x) {
    if (x.shape().size() != 3)
        throw Error("channel_sum: expected [C,H,W], got " + shape_str(x.shape()));
    const int C = x.shape()[0];
    const std::int64_t hw = static_cast<std::int64_t>(x.shape()[1]) * x.shape()[2];
    Tensor out(Shape{C});
    const double* px = x.data();
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < hw; ++i) acc += px[c * hw + i];
        out[c] = acc;
    }
    Node n;
    n.op = Op::channel_sum;
    n.a = x;
    n.out = std::move(out);
    return finish(std::move(n), "channel_sum");
}

Tensor channel_broadcast(const Tensor& v, Shape target) {
    if (v.shape().size() != 1 || target.size() != 3 || target[0] != v.shape()[0])
        throw Error("channel_broadcast: cannot broadcast " + shape_str(v.shape()) + " to " +
                    shape_str(target));
    Tensor out(target);
    const std::int64_t hw = static_cast<std::int64_t>(target[1]) * target[2];
    double* po = out.data();
    for (int c = 0; c < target[0]; ++c)
        for (std::int64_t i = 0; i < hw; ++i) po[c * hw + i] = v[c];
    Node n;
    n.op = Op::channel_broadcast;
    n.a = v;
    n.shape_attr = std::move(target);
    n.out = std::move(out);
    return finish(std::move(n), "channel_broadcast");
}

Tensor pick(const Tensor& x, std::int64_t index) {
    if (index < 0 || index >= x.size())
        throw Error("pick: index " + std::to_string(index) + " out of range for " +
                    shape_str(x.shape()));
    Node n;
    n.op = Op::pick;
    n.a = x;
    n.index = index;
    n.out = Tensor::scalar(x[index]);
    return finish(std::move(n), "pick");
}

Tensor scatter_at(const Tensor& s, std::int64_t index, Shape target) {
    if (s.size() != 1)
        throw Error("scatter_at: expected a scalar, got " + shape_str(s.shape()));
    if (index < 0 || index >= numel(target))
        throw Error("scatter_at: index " + std::to_string(index) + " out of range for " +
                    shape_str(target));
    Tensor out(target);
    out[index] = s.item();
    Node n;
    n.op = Op::scatter_at;
    n.a = s;
    n.index = index;
    n.shape_attr = std::move(target);
    n.out = std::move(out);
    return finish(std::move(n), "scatter_at");
}

Tensor logsumexp(const Tensor& x) {
    const double* px = x.data();
    double m = px[0];
    for (std::int64_t i = 1; i < x.size(); ++i) m = std::max(m, px[i]);
    // the max term contributes exp(0)=1, so the sum is >= 1 and log is safe
    return add_const(log(sum(exp(add_const(x, -m)))), m);
}

Tensor cross_entropy(const Tensor& logits, int target) {
    if (target < 0 || target >= logits.size())
        throw Error("cross_entropy: class " + std::to_string(target) + " out of range for " +
                    shape_str(logits.shape()));
    return sub(logsumexp(logits), pick(logits, target));
}

}  // namespace gradalign
