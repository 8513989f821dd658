#pragma once

#include <functional>
#include <span>
#include <string>

#include "gradalign/tape.hpp"
#include "gradalign/tensor.hpp"

namespace gradalign {

// Differentiates a scalar that was built from the outputs of a taped
// backward pass. Fails unless the tape runs in higher-order mode, because
// only then is the inner backward itself on the tape.
GradientResult grad_of_grad(Tape& tape, const Tensor& scalar_of_grads,
                            std::span<const std::string> wrt);

// H_f(x) * v via backward-over-backward. f receives a taped x and must
// return a taped scalar. The result is detached.
Tensor hessian_vector_product(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                              const Tensor& v);

}  // namespace gradalign
