#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace gradalign {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class Tape;

// Dense n-dimensional array of doubles, row-major. A tensor may carry a
// handle to a node on a tape; ops never mutate their inputs, so tensors
// sharing a buffer stay consistent.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<double>>(numel(shape_), 0.0)) {}

    Tensor(Shape shape, std::vector<double> values)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<double>>(std::move(values))) {
        if (static_cast<std::int64_t>(data_->size()) != numel(shape_))
            throw Error("tensor: data length " + std::to_string(data_->size()) +
                        " does not match shape " + shape_str(shape_));
    }

    static Tensor scalar(double v) { return Tensor({}, {v}); }
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape));
        for (auto& x : *t.data_) x = v;
        return t;
    }

    bool defined() const { return static_cast<bool>(data_); }
    const Shape& shape() const { return shape_; }
    std::int64_t size() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }

    double* data() { return data_->data(); }
    const double* data() const { return data_->data(); }

    double& operator[](std::int64_t i) { return (*data_)[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }

    double item() const {
        if (size() != 1)
            throw Error("tensor: item() requires exactly one element, shape is " + shape_str(shape_));
        return (*data_)[0];
    }

    // deep copy of the buffer, no tape handle
    Tensor clone() const {
        if (!defined()) return Tensor();
        return Tensor(shape_, *data_);
    }

    // same buffer, no tape handle
    Tensor detached() const {
        Tensor t = *this;
        t.node_ = -1;
        t.owner_ = nullptr;
        return t;
    }

    bool on_tape() const { return node_ >= 0; }
    int node() const { return node_; }
    const Tape* owner() const { return owner_; }

    void bind(const Tape* tape, int node) {
        owner_ = tape;
        node_ = node;
    }

private:
    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
    int node_ = -1;
    const Tape* owner_ = nullptr;
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

}  // namespace gradalign
