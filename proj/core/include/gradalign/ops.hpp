#pragma once

#include "gradalign/tensor.hpp"

namespace gradalign {

// Forward tensor operations. Each records a node on the active tape when one
// exists and any input is taped; values are bit-identical either way.
// Shape errors name the op and the offending shapes.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor affine(const Tensor& x, double scale, double shift);
Tensor scale(const Tensor& x, double s);
Tensor add_const(const Tensor& x, double c);
Tensor neg(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,n]x[n,k] or [m,n]x[n]
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& x, Shape target);
Tensor flatten(const Tensor& x);

Tensor conv2d(const Tensor& x, const Tensor& w, int pad);  // x[C,H,W], w[OC,C,kh,kw], stride 1
Tensor conv2d_input_grad(const Tensor& gout, const Tensor& w, int pad, const Shape& input_shape);
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& gout, int pad, const Shape& weight_shape);
Tensor maxpool2d(const Tensor& x, int k);  // kernel k, stride k, no padding
// routing building blocks of the maxpool backward
Tensor pool_gather(const Tensor& x, const std::shared_ptr<std::vector<std::int32_t>>& idx,
                   const Shape& pooled_shape);
Tensor pool_scatter(const Tensor& s, const std::shared_ptr<std::vector<std::int32_t>>& idx,
                    const Shape& full_shape);

Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x, double beta);
Tensor sigmoid(const Tensor& x, double beta = 1.0);  // sigmoid(beta*x)
Tensor softmax(const Tensor& x);                     // 1-D

Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor sqrt(const Tensor& x);

Tensor sum(const Tensor& x);   // all elements -> scalar
Tensor mean(const Tensor& x);  // all elements -> scalar
Tensor dot(const Tensor& a, const Tensor& b);
Tensor l2norm(const Tensor& v);

Tensor broadcast_scalar(const Tensor& s, Shape target);
Tensor channel_sum(const Tensor& x);                       // [C,H,W] -> [C]
Tensor channel_broadcast(const Tensor& v, Shape target);   // [C] -> [C,H,W]
Tensor pick(const Tensor& x, std::int64_t index);          // -> scalar
Tensor scatter_at(const Tensor& s, std::int64_t index, Shape target);

// log(sum_i exp(x_i)), shift-stabilized; safe to differentiate anywhere
Tensor logsumexp(const Tensor& x);
// cross-entropy of logits against target class
Tensor cross_entropy(const Tensor& logits, int target);

}  // namespace gradalign
