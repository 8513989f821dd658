#include "gradalign/autodiff.hpp"

#include <array>

#include "gradalign/ops.hpp"

namespace gradalign {

GradientResult grad_of_grad(Tape& tape, const Tensor& scalar_of_grads,
                            std::span<const std::string> wrt) {
    if (!tape.higher_order())
        throw Error(
            "grad_of_grad: the inner backward pass was not taped; "
            "construct the tape with higher-order mode enabled");
    return tape.backward(scalar_of_grads, wrt);
}

Tensor hessian_vector_product(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                              const Tensor& v) {
    if (x.shape() != v.shape())
        throw Error("hessian_vector_product: v shape " + shape_str(v.shape()) +
                    " does not match x " + shape_str(x.shape()));
    Tape tape(/*higher_order=*/true);
    Tensor xt = tape.watch(x, "x");
    Tensor s = f(xt);
    const std::array<std::string, 1> wrt{"x"};
    Tensor gx = tape.backward(s, wrt).grads.at("x");
    Tensor inner = dot(gx, v.detached());
    if (!inner.on_tape()) return Tensor::zeros(x.shape());  // f's gradient is constant
    Tensor hv = tape.backward(inner, wrt).grads.at("x");
    return hv.detached();
}

}  // namespace gradalign
