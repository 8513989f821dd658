#include "gradalign/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "gradalign/ops.hpp"
#include "gradalign/rng.hpp"

namespace gradalign {

Network Network::clone() const {
    Network c = *this;
    for (auto& l : c.layers) {
        if (l.weight.defined()) l.weight = l.weight.clone();
        if (l.bias.defined()) l.bias = l.bias.clone();
    }
    return c;
}

int Network::parameterized_count() const {
    int n = 0;
    for (const auto& l : layers) n += l.parameterized() ? 1 : 0;
    return n;
}

NetSpec mlp_spec(const std::vector<int>& widths, Activation act, double beta) {
    if (widths.size() < 2) throw Error("mlp_spec: need at least input and output widths");
    NetSpec s;
    s.activation = act;
    s.beta = beta;
    s.class_count = widths.back();
    s.input_shape = {widths.front()};
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        LayerSpec l;
        l.kind = LayerKind::dense;
        l.in = widths[i];
        l.out = widths[i + 1];
        l.activated = i + 2 < widths.size();  // no activation after the logit layer
        s.layers.push_back(l);
    }
    return s;
}

namespace {

LayerSpec conv(int in_ch, int out_ch, int k, int pad, bool act) {
    LayerSpec l;
    l.kind = LayerKind::conv2d;
    l.in = in_ch;
    l.out = out_ch;
    l.kernel = k;
    l.pad = pad;
    l.activated = act;
    return l;
}

LayerSpec pool(int k) {
    LayerSpec l;
    l.kind = LayerKind::maxpool2d;
    l.pool = k;
    return l;
}

LayerSpec flat() {
    LayerSpec l;
    l.kind = LayerKind::flatten;
    return l;
}

LayerSpec dense(int in, int out, bool act) {
    LayerSpec l;
    l.kind = LayerKind::dense;
    l.in = in;
    l.out = out;
    l.activated = act;
    return l;
}

NetSpec lenet_like(int in_channels, int side, int classes, int c1, int c2, int hidden,
                   Activation act, double beta) {
    if (side % 4 != 0) throw Error("lenet spec: side must be divisible by 4");
    NetSpec s;
    s.activation = act;
    s.beta = beta;
    s.class_count = classes;
    s.input_shape = {in_channels, side, side};
    s.layers.push_back(conv(in_channels, c1, 3, 1, true));
    s.layers.push_back(conv(c1, c1, 3, 1, true));
    s.layers.push_back(pool(2));
    s.layers.push_back(conv(c1, c2, 3, 1, true));
    s.layers.push_back(conv(c2, c2, 3, 1, true));
    s.layers.push_back(pool(2));
    s.layers.push_back(flat());
    int flat_dim = c2 * (side / 4) * (side / 4);
    s.layers.push_back(dense(flat_dim, hidden, true));
    s.layers.push_back(dense(hidden, classes, false));
    return s;
}

}  // namespace

NetSpec lenet_spec(int in_channels, int side, int classes, Activation act, double beta) {
    return lenet_like(in_channels, side, classes, 32, 64, 256, act, beta);
}

NetSpec lenet_mini_spec(int in_channels, int side, int classes, Activation act, double beta) {
    return lenet_like(in_channels, side, classes, 8, 8, 32, act, beta);
}

Network init_parameters(const NetSpec& spec, std::uint64_t seed) {
    Network net;
    net.activation = spec.activation;
    net.beta = spec.beta;
    net.class_count = spec.class_count;
    net.input_shape = spec.input_shape;
    net.init_seed = seed;
    Rng rng(seed);
    for (const auto& ls : spec.layers) {
        Layer layer;
        layer.spec = ls;
        if (ls.kind == LayerKind::dense) {
            int fan_in = ls.in;
            double bound = std::sqrt(6.0 / fan_in);
            Tensor w(Shape{ls.out, ls.in});
            for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
            layer.weight = std::move(w);
            if (ls.has_bias) layer.bias = Tensor::zeros({ls.out});
        } else if (ls.kind == LayerKind::conv2d) {
            int fan_in = ls.in * ls.kernel * ls.kernel;
            double bound = std::sqrt(6.0 / fan_in);
            Tensor w(Shape{ls.out, ls.in, ls.kernel, ls.kernel});
            for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
            layer.weight = std::move(w);
            if (ls.has_bias) layer.bias = Tensor::zeros({ls.out});
        }
        net.layers.push_back(std::move(layer));
    }
    return net;
}

namespace {

Tensor apply_activation(const Tensor& z, Activation act, double beta) {
    switch (act) {
        case Activation::relu: return relu(z);
        case Activation::softplus: return softplus(z, beta);
        case Activation::identity: return z;
    }
    return z;
}

Tensor forward_impl(const Network& net, const Tensor& x, const TapedParams* params) {
    if (x.shape() != net.input_shape)
        throw Error("forward: input shape " + shape_str(x.shape()) + " does not match network " +
                    shape_str(net.input_shape));
    Tensor h = x;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const Layer& l = net.layers[i];
        const Tensor& w = params ? params->weights[i] : l.weight;
        const Tensor& b = params ? params->biases[i] : l.bias;
        switch (l.spec.kind) {
            case LayerKind::dense:
                h = matmul(w, h);
                if (l.spec.has_bias) h = add(h, b);
                break;
            case LayerKind::conv2d:
                h = conv2d(h, w, l.spec.pad);
                if (l.spec.has_bias) h = add(h, channel_broadcast(b, h.shape()));
                break;
            case LayerKind::maxpool2d:
                h = maxpool2d(h, l.spec.pool);
                break;
            case LayerKind::flatten:
                h = flatten(h);
                break;
        }
        if (l.spec.activated) h = apply_activation(h, net.activation, net.beta);
    }
    if (h.size() != net.class_count)
        throw Error("forward: logits length " + std::to_string(h.size()) +
                    " does not match class count " + std::to_string(net.class_count));
    return h;
}

}  // namespace

Tensor forward_logits(const Network& net, const Tensor& x) { return forward_impl(net, x, nullptr); }

Tensor forward_logits(const Network& net, const TapedParams& params, const Tensor& x) {
    return forward_impl(net, x, &params);
}

Tensor forward_probs(const Network& net, const Tensor& x) {
    return softmax(forward_logits(net, x));
}

int predict_class(const Network& net, const Tensor& x) {
    NoRecord plain;
    Tensor logits = forward_logits(net, x);
    int best = 0;
    for (int c = 1; c < net.class_count; ++c)
        if (logits[c] > logits[best]) best = c;
    return best;
}

std::vector<std::string> parameter_ids(const Network& net) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (!net.layers[i].parameterized()) continue;
        ids.push_back("w" + std::to_string(i));
        if (net.layers[i].spec.has_bias) ids.push_back("b" + std::to_string(i));
    }
    return ids;
}

TapedParams watch_parameters(Tape& tape, const Network& net) {
    TapedParams p;
    p.weights.resize(net.layers.size());
    p.biases.resize(net.layers.size());
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const Layer& l = net.layers[i];
        if (!l.parameterized()) continue;
        p.weights[i] = tape.watch(l.weight, "w" + std::to_string(i));
        p.ids.push_back("w" + std::to_string(i));
        if (l.spec.has_bias) {
            p.biases[i] = tape.watch(l.bias, "b" + std::to_string(i));
            p.ids.push_back("b" + std::to_string(i));
        }
    }
    return p;
}

Network alpha_transform(const Network& net, int layer_index, double alpha) {
    if (alpha <= 0.0) throw Error("alpha_transform: alpha must be positive");
    Network out = net.clone();
    int seen = 0;
    for (auto& l : out.layers) {
        if (!l.parameterized()) continue;
        if (seen == layer_index) {
            for (std::int64_t i = 0; i < l.weight.size(); ++i) l.weight[i] *= alpha;
            if (l.bias.defined())
                for (std::int64_t i = 0; i < l.bias.size(); ++i) l.bias[i] *= alpha;
            return out;
        }
        ++seen;
    }
    throw Error("alpha_transform: layer index " + std::to_string(layer_index) +
                " out of range, network has " + std::to_string(seen) + " parameterized layers");
}

const char* activation_name(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::softplus: return "softplus";
        case Activation::identity: return "identity";
    }
    return "?";
}

Activation activation_from_name(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "softplus") return Activation::softplus;
    if (s == "identity") return Activation::identity;
    throw Error("unknown activation '" + s + "'");
}

namespace {

void write_f64_block(std::ostream& os, const Tensor& t) {
    // doubles are written little-endian regardless of host order
    for (std::int64_t i = 0; i < t.size(); ++i) {
        double v = t[i];
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        unsigned char bytes[8];
        for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
        os.write(reinterpret_cast<const char*>(bytes), 8);
    }
}

void read_f64_block(std::istream& is, Tensor& t) {
    for (std::int64_t i = 0; i < t.size(); ++i) {
        unsigned char bytes[8];
        is.read(reinterpret_cast<char*>(bytes), 8);
        if (!is) throw Error("checkpoint: parameter block truncated");
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        t[i] = v;
    }
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void save_checkpoint(const Network& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("checkpoint: cannot open '" + path + "' for writing");
    os << "gradalign-checkpoint 1\n";
    os << "activation " << activation_name(net.activation) << "\n";
    os << "beta " << fmt_double(net.beta) << "\n";
    os << "classes " << net.class_count << "\n";
    os << "input";
    for (int d : net.input_shape) os << " " << d;
    os << "\n";
    os << "seed " << net.init_seed << "\n";
    os << "layers " << net.layers.size() << "\n";
    for (const auto& l : net.layers) {
        switch (l.spec.kind) {
            case LayerKind::dense:
                os << "dense in " << l.spec.in << " out " << l.spec.out << " bias "
                   << (l.spec.has_bias ? 1 : 0) << " act " << (l.spec.activated ? 1 : 0) << "\n";
                break;
            case LayerKind::conv2d:
                os << "conv in " << l.spec.in << " out " << l.spec.out << " kernel "
                   << l.spec.kernel << " pad " << l.spec.pad << " bias "
                   << (l.spec.has_bias ? 1 : 0) << " act " << (l.spec.activated ? 1 : 0) << "\n";
                break;
            case LayerKind::maxpool2d:
                os << "maxpool k " << l.spec.pool << "\n";
                break;
            case LayerKind::flatten:
                os << "flatten\n";
                break;
        }
    }
    os << "end\n";
    for (const auto& l : net.layers) {
        if (!l.parameterized()) continue;
        write_f64_block(os, l.weight);
        if (l.spec.has_bias) write_f64_block(os, l.bias);
    }
    if (!os) throw Error("checkpoint: write to '" + path + "' failed");
}

Network load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("checkpoint: cannot open '" + path + "'");
    std::string line;
    auto next_line = [&]() -> std::string {
        if (!std::getline(is, line)) throw Error("checkpoint: header truncated in '" + path + "'");
        return line;
    };
    if (next_line() != "gradalign-checkpoint 1")
        throw Error("checkpoint: '" + path + "' has an unknown format header");

    NetSpec spec;
    std::uint64_t seed = 0;
    std::size_t layer_count = 0;
    while (true) {
        std::string l = next_line();
        if (l == "end") break;
        std::istringstream ss(l);
        std::string key;
        ss >> key;
        if (key == "activation") {
            std::string a;
            ss >> a;
            spec.activation = activation_from_name(a);
        } else if (key == "beta") {
            ss >> spec.beta;
        } else if (key == "classes") {
            ss >> spec.class_count;
        } else if (key == "input") {
            int d;
            spec.input_shape.clear();
            while (ss >> d) spec.input_shape.push_back(d);
        } else if (key == "seed") {
            ss >> seed;
        } else if (key == "layers") {
            ss >> layer_count;
        } else if (key == "dense" || key == "conv") {
            LayerSpec ls;
            ls.kind = key == "dense" ? LayerKind::dense : LayerKind::conv2d;
            std::string field;
            int value;
            while (ss >> field >> value) {
                if (field == "in") ls.in = value;
                else if (field == "out") ls.out = value;
                else if (field == "kernel") ls.kernel = value;
                else if (field == "pad") ls.pad = value;
                else if (field == "bias") ls.has_bias = value != 0;
                else if (field == "act") ls.activated = value != 0;
                else throw Error("checkpoint: unknown layer field '" + field + "'");
            }
            spec.layers.push_back(ls);
        } else if (key == "maxpool") {
            LayerSpec ls;
            ls.kind = LayerKind::maxpool2d;
            std::string field;
            ss >> field >> ls.pool;
            spec.layers.push_back(ls);
        } else if (key == "flatten") {
            LayerSpec ls;
            ls.kind = LayerKind::flatten;
            spec.layers.push_back(ls);
        } else {
            throw Error("checkpoint: unknown header key '" + key + "'");
        }
    }
    if (spec.layers.size() != layer_count)
        throw Error("checkpoint: header declares " + std::to_string(layer_count) +
                    " layers but lists " + std::to_string(spec.layers.size()));

    Network net;
    net.activation = spec.activation;
    net.beta = spec.beta;
    net.class_count = spec.class_count;
    net.input_shape = spec.input_shape;
    net.init_seed = seed;
    for (const auto& ls : spec.layers) {
        Layer layer;
        layer.spec = ls;
        if (ls.kind == LayerKind::dense) {
            layer.weight = Tensor(Shape{ls.out, ls.in});
            if (ls.has_bias) layer.bias = Tensor(Shape{ls.out});
        } else if (ls.kind == LayerKind::conv2d) {
            layer.weight = Tensor(Shape{ls.out, ls.in, ls.kernel, ls.kernel});
            if (ls.has_bias) layer.bias = Tensor(Shape{ls.out});
        }
        net.layers.push_back(std::move(layer));
    }
    for (auto& l : net.layers) {
        if (!l.parameterized()) continue;
        read_f64_block(is, l.weight);
        if (l.spec.has_bias) read_f64_block(is, l.bias);
    }
    return net;
}

}  // namespace gradalign
