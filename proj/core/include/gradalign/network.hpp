#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gradalign/tape.hpp"
#include "gradalign/tensor.hpp"

namespace gradalign {

enum class Activation { relu, softplus, identity };

enum class LayerKind { dense, conv2d, maxpool2d, flatten };

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    int in = 0, out = 0;     // dense fan-in / fan-out, conv in/out channels
    int kernel = 0, pad = 0; // conv geometry
    int pool = 0;            // maxpool kernel == stride
    bool has_bias = true;
    bool activated = false;  // apply the network activation after this layer
};

struct NetSpec {
    std::vector<LayerSpec> layers;
    Activation activation = Activation::softplus;
    double beta = 3.0;
    int class_count = 0;
    Shape input_shape;
};

struct Layer {
    LayerSpec spec;
    Tensor weight;  // dense [out,in]; conv [oc,ic,k,k]
    Tensor bias;    // [out] / [oc]
    bool parameterized() const {
        return spec.kind == LayerKind::dense || spec.kind == LayerKind::conv2d;
    }
};

struct Network {
    std::vector<Layer> layers;
    Activation activation = Activation::softplus;
    double beta = 3.0;
    int class_count = 0;
    Shape input_shape;
    std::uint64_t init_seed = 0;

    Network clone() const;
    int parameterized_count() const;
};

// Ready-made specs.
NetSpec mlp_spec(const std::vector<int>& widths, Activation act, double beta = 3.0);
// four conv layers, two poolings, two dense layers; 3x32x32 -> 10 classes by default
NetSpec lenet_spec(int in_channels = 3, int side = 32, int classes = 10,
                   Activation act = Activation::softplus, double beta = 3.0);
// same arrangement at 8/8 channels for fast runs, 16x16 inputs by default
NetSpec lenet_mini_spec(int in_channels = 1, int side = 16, int classes = 4,
                        Activation act = Activation::softplus, double beta = 3.0);

// Kaiming-uniform weights, zero biases; reproducible from seed.
Network init_parameters(const NetSpec& spec, std::uint64_t seed);

Tensor forward_logits(const Network& net, const Tensor& x);
Tensor forward_probs(const Network& net, const Tensor& x);
int predict_class(const Network& net, const Tensor& x);

// Parameters registered on a tape for differentiation w.r.t. them.
// Identifiers are "w<i>" / "b<i>" with i indexing net.layers.
struct TapedParams {
    std::vector<Tensor> weights, biases;  // index-aligned with net.layers; undefined for non-param layers
    std::vector<std::string> ids;
};
std::vector<std::string> parameter_ids(const Network& net);
TapedParams watch_parameters(Tape& tape, const Network& net);
Tensor forward_logits(const Network& net, const TapedParams& params, const Tensor& x);

// Scales layer i's weight and bias by alpha; i indexes parameterized layers.
// Returns a new network, the original is untouched.
Network alpha_transform(const Network& net, int layer_index, double alpha);

// Checkpoint: text header, then the flat little-endian 64-bit parameter
// block in layer order. Round-trips bit-exactly.
void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& s);

}  // namespace gradalign
