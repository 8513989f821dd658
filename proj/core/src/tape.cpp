#include "gradalign/tape.hpp"

#include <optional>

#include "gradalign/ops.hpp"

namespace gradalign {

namespace {

thread_local Tape* g_active = nullptr;

// 0/1 mask of strictly positive entries, as a constant tensor
Tensor positive_mask(const Tensor& t) {
    Tensor m(t.shape());
    const double* p = t.data();
    double* q = m.data();
    for (std::int64_t i = 0; i < t.size(); ++i) q[i] = p[i] > 0.0 ? 1.0 : 0.0;
    return m;
}

}  // namespace

Tape* Tape::active() { return g_active; }

Tape::Tape(bool higher_order) : higher_order_(higher_order) {
    prev_active_ = g_active;
    g_active = this;
}

Tape::~Tape() { g_active = prev_active_; }

NoRecord::NoRecord() : saved_(g_active) { g_active = nullptr; }
NoRecord::~NoRecord() { g_active = saved_; }

int Tape::record(Node n) {
    int id = static_cast<int>(nodes_.size());
    n.out.bind(this, id);
    nodes_.push_back(std::move(n));
    return id;
}

std::int64_t Tape::bytes() const {
    std::int64_t total = 0;
    for (const auto& n : nodes_) total += n.out.size() * static_cast<std::int64_t>(sizeof(double));
    return total;
}

Tensor Tape::watch(const Tensor& t, const std::string& id) {
    if (leaves_.count(id))
        throw Error("tape: identifier '" + id + "' is already watched");
    Node n;
    n.op = Op::leaf;
    n.out = t.detached();
    int nid = record(std::move(n));
    leaves_[id] = nid;
    return nodes_[static_cast<std::size_t>(nid)].out;
}

namespace {

struct AdjointSink {
    std::vector<Tensor>& adj;
    int limit;  // only nodes <= limit take part in this backward pass

    void accumulate(const Tensor& input, const Tensor& contrib) {
        if (!input.defined() || !input.on_tape()) return;
        int id = input.node();
        if (id > limit) return;
        Tensor& slot = adj[static_cast<std::size_t>(id)];
        slot = slot.defined() ? add(slot, contrib) : contrib;
    }
};

void backprop_node(const Node& n, const Tensor& g, AdjointSink& sink, const BackwardOptions& opts) {
    switch (n.op) {
        case Op::leaf:
            break;
        case Op::add:
            sink.accumulate(n.a, g);
            sink.accumulate(n.b, g);
            break;
        case Op::sub:
            sink.accumulate(n.a, g);
            sink.accumulate(n.b, neg(g));
            break;
        case Op::mul:
            sink.accumulate(n.a, mul(g, n.b));
            sink.accumulate(n.b, mul(g, n.a));
            break;
        case Op::div:
            sink.accumulate(n.a, div(g, n.b));
            sink.accumulate(n.b, neg(mul(g, div(n.out, n.b))));
            break;
        case Op::affine:
            sink.accumulate(n.a, scale(g, n.c0));
            break;
        case Op::matmul:
            sink.accumulate(n.a, matmul(g, transpose(n.b)));
            sink.accumulate(n.b, matmul(transpose(n.a), g));
            break;
        case Op::matvec: {
            const int m = n.a.shape()[0];
            const int k = n.a.shape()[1];
            sink.accumulate(n.a, matmul(reshape(g, {m, 1}), reshape(n.b, {1, k})));
            sink.accumulate(n.b, matmul(transpose(n.a), g));
            break;
        }
        case Op::transpose2d:
            sink.accumulate(n.a, transpose(g));
            break;
        case Op::reshape:
            sink.accumulate(n.a, reshape(g, n.a.shape()));
            break;
        case Op::conv2d:
            sink.accumulate(n.a, conv2d_input_grad(g, n.b, n.pad, n.a.shape()));
            sink.accumulate(n.b, conv2d_weight_grad(n.a, g, n.pad, n.b.shape()));
            break;
        case Op::conv2d_igrad:
            // out = igrad(G, W); d/dG is the original correlation, d/dW a weight grad
            sink.accumulate(n.a, conv2d(g, n.b, n.pad));
            sink.accumulate(n.b, conv2d_weight_grad(g, n.a, n.pad, n.b.shape()));
            break;
        case Op::conv2d_wgrad:
            // out = wgrad(X, G)
            sink.accumulate(n.a, conv2d_input_grad(n.b, g, n.pad, n.a.shape()));
            sink.accumulate(n.b, conv2d(n.a, g, n.pad));
            break;
        case Op::maxpool2d:
            sink.accumulate(n.a, pool_scatter(g, n.indices, n.a.shape()));
            break;
        case Op::pool_gather:
            sink.accumulate(n.a, pool_scatter(g, n.indices, n.a.shape()));
            break;
        case Op::pool_scatter:
            sink.accumulate(n.a, pool_gather(g, n.indices, n.a.shape()));
            break;
        case Op::relu: {
            Tensor flow = mul(g, positive_mask(n.a));
            if (opts.guided) flow = mul(flow, positive_mask(g));
            sink.accumulate(n.a, flow);
            break;
        }
        case Op::softplus: {
            Tensor flow = mul(g, sigmoid(n.a, n.c0));
            if (opts.guided) flow = mul(mul(flow, positive_mask(n.a)), positive_mask(g));
            sink.accumulate(n.a, flow);
            break;
        }
        case Op::sigmoid: {
            // d sigmoid(beta x) = beta * y * (1 - y)
            Tensor one_minus = affine(n.out, -1.0, 1.0);
            sink.accumulate(n.a, mul(g, scale(mul(n.out, one_minus), n.c0)));
            break;
        }
        case Op::softmax_vec: {
            Tensor s = dot(g, n.out);
            sink.accumulate(n.a, mul(n.out, sub(g, broadcast_scalar(s, n.out.shape()))));
            break;
        }
        case Op::log:
            sink.accumulate(n.a, div(g, n.a));
            break;
        case Op::exp:
            sink.accumulate(n.a, mul(g, n.out));
            break;
        case Op::sqrt: {
            bool any_zero = false;
            for (std::int64_t i = 0; i < n.out.size(); ++i)
                if (n.out[i] == 0.0) any_zero = true;
            if (any_zero) {
                // flat subgradient at the kink; keeps downstream values finite
                Tensor inv(n.out.shape());
                for (std::int64_t i = 0; i < n.out.size(); ++i)
                    inv[i] = n.out[i] == 0.0 ? 0.0 : 0.5 / n.out[i];
                sink.accumulate(n.a, mul(g, inv));
            } else {
                sink.accumulate(n.a, div(g, scale(n.out, 2.0)));
            }
            break;
        }
        case Op::l2norm: {
            if (n.out.item() == 0.0) {
                sink.accumulate(n.a, Tensor::zeros(n.a.shape()));
            } else {
                Tensor unit = mul(broadcast_scalar(div(g, n.out), n.a.shape()), n.a);
                sink.accumulate(n.a, unit);
            }
            break;
        }
        case Op::sum_all:
            sink.accumulate(n.a, broadcast_scalar(g, n.a.shape()));
            break;
        case Op::broadcast_scalar:
            sink.accumulate(n.a, sum(g));
            break;
        case Op::channel_sum:
            sink.accumulate(n.a, channel_broadcast(g, n.a.shape()));
            break;
        case Op::channel_broadcast:
            sink.accumulate(n.a, channel_sum(g));
            break;
        case Op::pick:
            sink.accumulate(n.a, scatter_at(g, n.index, n.a.shape()));
            break;
        case Op::scatter_at:
            sink.accumulate(n.a, pick(g, n.index));
            break;
    }
}

}  // namespace

GradientResult Tape::backward(const Tensor& scalar, std::span<const std::string> wrt,
                              const BackwardOptions& opts) {
    if (!scalar.defined() || scalar.size() != 1)
        throw Error("backward: expected a one-element scalar, got " +
                    (scalar.defined() ? shape_str(scalar.shape()) : std::string("undefined")));
    if (!scalar.on_tape() || scalar.owner() != this)
        throw Error("backward: scalar is not recorded on this tape");
    for (const auto& id : wrt)
        if (!leaves_.count(id))
            throw Error("backward: identifier '" + id + "' was never watched on this tape");

    const int root = scalar.node();
    std::vector<Tensor> adj(static_cast<std::size_t>(root) + 1);
    adj[static_cast<std::size_t>(root)] = Tensor::scalar(1.0);
    last_visits_.assign(nodes_.size(), 0);

    AdjointSink sink{adj, root};
    std::optional<NoRecord> plain;
    if (!higher_order_) plain.emplace();

    for (int i = root; i >= 0; --i) {
        if (!adj[static_cast<std::size_t>(i)].defined()) continue;
        last_visits_[static_cast<std::size_t>(i)] += 1;
        // copy: recording mode appends to nodes_ mid-dispatch, which may
        // reallocate the vector under a reference
        Node n = nodes_[static_cast<std::size_t>(i)];
        backprop_node(n, adj[static_cast<std::size_t>(i)], sink, opts);
    }

    GradientResult result;
    result.value = scalar;
    for (const auto& id : wrt) {
        int nid = leaves_.at(id);
        if (nid <= root && adj[static_cast<std::size_t>(nid)].defined())
            result.grads[id] = adj[static_cast<std::size_t>(nid)];
        else
            result.grads[id] = Tensor::zeros(nodes_[static_cast<std::size_t>(nid)].out.shape());
    }
    return result;
}

}  // namespace gradalign
