#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gradalign/tensor.hpp"

namespace gradalign {

enum class Op : std::uint8_t {
    leaf,
    add,
    sub,
    mul,
    div,
    affine,        // c0 * x + c1
    matmul,        // [m,n] x [n,k]
    matvec,        // [m,n] x [n]
    transpose2d,
    reshape,
    conv2d,        // stride 1, symmetric zero padding
    conv2d_igrad,  // gradient of conv2d w.r.t. its input, as a forward op
    conv2d_wgrad,  // gradient of conv2d w.r.t. its kernel, as a forward op
    maxpool2d,     // kernel == stride
    pool_gather,   // select input elements at saved argmax positions
    pool_scatter,  // scatter pooled values back to saved argmax positions
    relu,
    softplus,
    sigmoid,       // sigmoid(beta * x)
    softmax_vec,
    log,
    exp,
    sqrt,
    l2norm,
    sum_all,
    broadcast_scalar,
    channel_sum,        // [C,H,W] -> [C]
    channel_broadcast,  // [C] -> [C,H,W]
    pick,               // one element -> scalar
    scatter_at,         // scalar -> one-hot tensor
};

const char* op_name(Op op);

struct Node {
    Op op = Op::leaf;
    Tensor a, b;    // inputs (b may be undefined); their tape handles drive the backward walk
    Tensor out;     // forward value, bound to this node
    double c0 = 0.0, c1 = 0.0;  // scalar attributes: affine coefficients, softplus/sigmoid beta
    int pad = 0;
    int pool = 0;
    std::int64_t index = -1;  // pick / scatter_at
    Shape shape_attr;         // reshape / broadcast / scatter target shape
    std::shared_ptr<std::vector<std::int32_t>> indices;  // maxpool argmax routing
};

struct GradientResult {
    Tensor value;                          // the differentiated scalar
    std::map<std::string, Tensor> grads;   // identifier -> gradient tensor
};

struct BackwardOptions {
    // Guided mode gates every activation site: the flowing gradient is
    // additionally masked by 1(pre-activation > 0) and 1(upstream grad > 0).
    bool guided = false;
};

// Append-only record of forward operations. Constructing a tape makes it the
// active recorder for the current thread; destruction restores the previous
// one. With higher_order enabled, backward passes replay through the public
// ops and are themselves recorded, so gradients can be differentiated again.
class Tape {
public:
    explicit Tape(bool higher_order = false);
    ~Tape();

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool higher_order() const { return higher_order_; }
    int size() const { return static_cast<int>(nodes_.size()); }
    const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
    std::int64_t bytes() const;

    // Register a leaf. Returns a tensor sharing t's buffer, bound to this tape.
    Tensor watch(const Tensor& t, const std::string& id);
    bool has_leaf(const std::string& id) const { return leaves_.count(id) > 0; }

    GradientResult backward(const Tensor& scalar, std::span<const std::string> wrt,
                            const BackwardOptions& opts = {});

    // how many times each node was visited by the most recent backward call
    const std::vector<int>& last_visit_counts() const { return last_visits_; }

    // unique identifier for ad-hoc leaves, e.g. "x#3"
    std::string fresh_id(const std::string& base) {
        return base + "#" + std::to_string(fresh_counter_++);
    }

    int record(Node n);  // used by the op layer

    static Tape* active();

private:
    std::vector<Node> nodes_;
    std::unordered_map<std::string, int> leaves_;
    bool higher_order_ = false;
    std::vector<int> last_visits_;
    int fresh_counter_ = 0;
    Tape* prev_active_ = nullptr;
};

// Suppresses recording while alive; forward values are unchanged.
class NoRecord {
public:
    NoRecord();
    ~NoRecord();
    NoRecord(const NoRecord&) = delete;
    NoRecord& operator=(const NoRecord&) = delete;

private:
    Tape* saved_ = nullptr;
};

}  // namespace gradalign
