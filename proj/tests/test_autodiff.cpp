#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>

#include "gradalign/autodiff.hpp"
#include "gradalign/criteria.hpp"
#include "gradalign/ops.hpp"
#include "gradalign/tape.hpp"
#include "support/test_helpers.hpp"

using namespace gradalign;
using namespace gradalign::testing;

namespace {
const std::array<std::string, 1> kWrtX{"x"};
}

TEST_CASE("matmul hand arithmetic") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 1}, {1, 1});
    Tensor c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 1});
    CHECK(c[0] == 3.0);
    CHECK(c[1] == 7.0);
}

TEST_CASE("softplus values") {
    Tensor x = Tensor::scalar(0.0);
    CHECK(softplus(x, 3.0).item() == doctest::Approx(std::log(2.0) / 3.0).epsilon(1e-12));
    CHECK(std::abs(softplus(Tensor::scalar(50.0), 3.0).item() - 50.0) < 1e-12);
    CHECK(std::isfinite(softplus(Tensor::scalar(-1e6), 3.0).item()));
}

TEST_CASE("backward of sum of squares") {
    Tape tape;
    Tensor x = tape.watch(Tensor({3}, {1, 2, 3}), "x");
    Tensor s = sum(mul(x, x));
    auto r = tape.backward(s, kWrtX);
    const Tensor& g = r.grads.at("x");
    CHECK(g[0] == 2.0);
    CHECK(g[1] == 4.0);
    CHECK(g[2] == 6.0);
}

TEST_CASE("softplus derivative at zero is half") {
    Tape tape;
    Tensor x = tape.watch(Tensor::scalar(0.0), "x");
    auto r = tape.backward(softplus(x, 3.0), kWrtX);
    CHECK(r.grads.at("x").item() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("gradients of a random softplus net match finite differences") {
    Rng rng(7);
    for (int trial = 0; trial < 4; ++trial) {
        Network net = random_mlp(rng, {4, 8, 3}, Activation::softplus, 3.0);
        Tensor x0 = random_tensor({4}, rng);
        const int y = 1;
        auto value = [&](const Tensor& x) {
            NoRecord plain;
            return pick(forward_logits(net, x), y).item();
        };
        Tensor fd = finite_diff_gradient(value, x0);
        Tape tape;
        Tensor xt = tape.watch(x0, "x");
        Tensor analytic = tape.backward(pick(forward_logits(net, xt), y), kWrtX).grads.at("x");
        CHECK(rel_err(analytic, fd) < 1e-5);
    }
}

TEST_CASE("per-op gradients match finite differences") {
    Rng rng(11);
    // each case: builder over a taped x producing a scalar, plus an input
    struct Case {
        const char* name;
        Shape shape;
        std::function<Tensor(const Tensor&)> build;
        double lo = -1.0, hi = 1.0;
    };
    Tensor probe_w = random_tensor({3, 4}, rng);
    Tensor probe_v = random_tensor({4}, rng);
    Tensor probe_5 = random_tensor({5}, rng);
    Tensor probe_m = random_tensor({4, 2}, rng);
    Tensor kernel = random_tensor({2, 2, 3, 3}, rng);
    std::vector<Case> cases = {
        {"add", {5}, [&](const Tensor& x) { return sum(mul(add(x, probe_5.detached()), x)); }},
        {"sub", {5}, [&](const Tensor& x) { return sum(mul(sub(x, probe_5.detached()), x)); }},
        {"mul", {5}, [&](const Tensor& x) { return sum(mul(x, x)); }},
        {"div", {5}, [&](const Tensor& x) { return sum(div(Tensor::full({5}, 2.0), x)); }, 0.5, 2.0},
        {"affine", {5}, [&](const Tensor& x) { return sum(mul(affine(x, 1.7, -0.3), x)); }},
        {"matmul_lhs", {4, 2}, [&](const Tensor& x) { Tensor y = matmul(x, transpose(probe_m.detached())); return sum(mul(y, y)); }},
        {"matmul_rhs", {2, 3}, [&](const Tensor& x) { Tensor y = matmul(probe_m.detached(), x); return sum(mul(y, y)); }},
        {"matvec", {4}, [&](const Tensor& x) { return sum(mul(matmul(probe_w.detached(), x), matmul(probe_w.detached(), x))); }},
        {"transpose", {3, 4}, [&](const Tensor& x) { return sum(mul(transpose(x), transpose(probe_w.detached()))); }},
        {"reshape", {6}, [&](const Tensor& x) { return sum(mul(reshape(x, {2, 3}), reshape(x, {2, 3}))); }},
        {"conv2d", {2, 5, 5}, [&](const Tensor& x) { Tensor y = conv2d(x, kernel.detached(), 1); return sum(mul(y, y)); }},
        {"maxpool", {2, 4, 4}, [&](const Tensor& x) { Tensor y = maxpool2d(x, 2); return sum(mul(y, y)); }},
        {"relu", {6}, [&](const Tensor& x) { Tensor y = relu(x); return sum(mul(y, y)); }},
        {"softplus", {6}, [&](const Tensor& x) { Tensor y = softplus(x, 3.0); return sum(mul(y, y)); }},
        {"sigmoid", {6}, [&](const Tensor& x) { Tensor y = sigmoid(x, 2.0); return sum(mul(y, y)); }},
        {"softmax", {5}, [&](const Tensor& x) { return sum(mul(softmax(x), probe_5.detached())); }},
        {"log", {5}, [&](const Tensor& x) { return sum(mul(log(x), log(x))); }, 0.5, 2.0},
        {"exp", {5}, [&](const Tensor& x) { return sum(mul(exp(x), probe_5.detached())); }},
        {"sqrt", {5}, [&](const Tensor& x) { return sum(mul(sqrt(x), probe_5.detached())); }, 0.5, 2.0},
        {"mean", {5}, [&](const Tensor& x) { return mul(mean(x), mean(x)); }},
        {"dot", {5}, [&](const Tensor& x) { return dot(x, x); }},
        {"l2norm", {5}, [&](const Tensor& x) { return mul(l2norm(x), l2norm(x)); }},
        {"broadcast", {}, [&](const Tensor& x) { return sum(mul(broadcast_scalar(x, {4}), probe_v.detached())); }},
        {"channel_sum", {2, 3, 3}, [&](const Tensor& x) { Tensor y = channel_sum(x); return sum(mul(y, y)); }},
        {"channel_broadcast", {2}, [&](const Tensor& x) { Tensor y = channel_broadcast(x, {2, 3, 3}); return sum(mul(y, y)); }},
        {"pick", {5}, [&](const Tensor& x) { return mul(pick(x, 2), pick(x, 2)); }},
        {"scatter", {}, [&](const Tensor& x) { Tensor y = scatter_at(x, 1, {4}); return sum(mul(y, y)); }},
        {"logsumexp", {5}, [&](const Tensor& x) { return mul(logsumexp(x), logsumexp(x)); }},
        {"cross_entropy", {5}, [&](const Tensor& x) { return cross_entropy(x, 2); }},
    };
    for (auto& c : cases) {
        CAPTURE(c.name);
        Tensor x0 = random_tensor(c.shape, rng, c.lo, c.hi);
        // keep relu/maxpool inputs away from their kinks
        for (std::int64_t i = 0; i < x0.size(); ++i)
            if (std::abs(x0[i]) < 1e-3) x0[i] = 1e-2;
        auto value = [&](const Tensor& x) {
            NoRecord plain;
            return c.build(x).item();
        };
        Tensor fd = finite_diff_gradient(value, x0);
        Tape tape;
        Tensor xt = tape.watch(x0, "x");
        Tensor analytic = tape.backward(c.build(xt), kWrtX).grads.at("x");
        CHECK_MESSAGE(rel_err(analytic, fd) < 1e-5, c.name);
    }
}

TEST_CASE("taping neutrality: forward values identical with and without tape") {
    Rng rng(3);
    Network net = random_small_cnn(rng, Activation::softplus);
    Tensor x = random_tensor({2, 6, 6}, rng);
    Tensor plain_out;
    {
        NoRecord plain;
        plain_out = forward_logits(net, x);
    }
    Tape tape(true);
    Tensor xt = tape.watch(x, "x");
    Tensor taped_out = forward_logits(net, xt);
    for (std::int64_t i = 0; i < plain_out.size(); ++i) CHECK(plain_out[i] == taped_out[i]);
}

TEST_CASE("backward visits every reachable node exactly once") {
    Rng rng(5);
    Network net = random_mlp(rng, {3, 5, 2}, Activation::softplus);
    Tape tape;
    Tensor xt = tape.watch(random_tensor({3}, rng), "x");
    Tensor s = cross_entropy(forward_logits(net, xt), 0);
    tape.backward(s, kWrtX);
    int visited = 0;
    for (int c : tape.last_visit_counts()) {
        CHECK(c <= 1);
        visited += c;
    }
    CHECK(visited > 0);
}

TEST_CASE("grad_of_grad: linear net, d/dw of squared input-gradient norm is 2w") {
    // g(x) = w . x, grad_x g = w, so d/dw ||grad_x g||^2 = 2w
    Tensor w({3}, {0.5, -1.0, 2.0});
    Tape tape(/*higher_order=*/true);
    Tensor wt = tape.watch(w, "w");
    Tensor xt = tape.watch(Tensor({3}, {1.0, 2.0, 3.0}), "x");
    Tensor s = dot(wt, xt);
    Tensor gx = tape.backward(s, kWrtX).grads.at("x");
    Tensor norm_sq = dot(gx, gx);
    const std::array<std::string, 1> wrt_w{"w"};
    Tensor gw = grad_of_grad(tape, norm_sq, wrt_w).grads.at("w");
    for (int i = 0; i < 3; ++i) CHECK(gw[i] == doctest::Approx(2.0 * w[i]).epsilon(1e-12));
}

TEST_CASE("relu nets: zero input Hessian but nonzero parameter-gradient of the criterion") {
    Rng rng(19);
    Network net = random_mlp(rng, {4, 6, 2}, Activation::relu);
    Tensor x = random_tensor({4}, rng);
    // Hessian-vector product vanishes (piecewise linear)
    Tensor hv = hessian_vector_product(
        [&](const Tensor& xt) { return pick(forward_logits(net, xt), 0); }, x,
        random_tensor({4}, rng));
    for (std::int64_t i = 0; i < hv.size(); ++i) CHECK(hv[i] == 0.0);

    // but d/dTheta of ||grad_x g||^2 does not
    Tape tape(/*higher_order=*/true);
    TapedParams params = watch_parameters(tape, net);
    Tensor xt = tape.watch(x, "x");
    Tensor gx = tape.backward(pick(forward_logits(net, params, xt), 0), kWrtX).grads.at("x");
    auto gw = grad_of_grad(tape, dot(gx, gx), params.ids);
    double total = 0.0;
    for (const auto& [id, g] : gw.grads)
        for (std::int64_t i = 0; i < g.size(); ++i) total += std::abs(g[i]);
    CHECK(total > 1e-6);
}

TEST_CASE("grad_of_grad rejects a first-order tape") {
    Tape tape(/*higher_order=*/false);
    Tensor xt = tape.watch(Tensor({2}, {1, 2}), "x");
    Tensor s = dot(xt, xt);
    Tensor g = tape.backward(s, kWrtX).grads.at("x");
    Tensor n = dot(g, g);
    CHECK_THROWS_WITH_AS(grad_of_grad(tape, n, kWrtX), doctest::Contains("higher-order"),
                         Error);
}

TEST_CASE("hessian-vector products") {
    SUBCASE("quadratic form has H equal to its matrix") {
        Tensor a({2, 2}, {2, 1, 1, 3});
        auto f = [&](const Tensor& x) { return scale(dot(x, matmul(a.detached(), x)), 0.5); };
        Tensor hv = hessian_vector_product(f, Tensor({2}, {0.3, -0.7}), Tensor({2}, {1, 0}));
        CHECK(hv[0] == doctest::Approx(2.0).epsilon(1e-10));
        CHECK(hv[1] == doctest::Approx(1.0).epsilon(1e-10));
    }
    SUBCASE("linear function has zero Hessian") {
        Tensor w({3}, {1, -2, 0.5});
        auto f = [&](const Tensor& x) { return dot(w.detached(), x); };
        Tensor hv = hessian_vector_product(f, Tensor({3}, {1, 1, 1}), Tensor({3}, {0, 1, 0}));
        for (int i = 0; i < 3; ++i) CHECK(hv[i] == 0.0);
    }
    SUBCASE("random softplus net matches the finite-difference directional derivative") {
        Rng rng(23);
        Network net = random_mlp(rng, {4, 7, 3}, Activation::softplus);
        Tensor x = random_tensor({4}, rng);
        Tensor v = random_tensor({4}, rng);
        auto f = [&](const Tensor& xt) { return pick(forward_logits(net, xt), 2); };
        Tensor hv = hessian_vector_product(f, x, v);
        const double h = 1e-4;
        Tensor xp = x.clone(), xm = x.clone();
        for (int i = 0; i < 4; ++i) {
            xp[i] += h * v[i];
            xm[i] -= h * v[i];
        }
        Tensor gp = input_gradient_value(net, xp, 2);
        Tensor gm = input_gradient_value(net, xm, 2);
        Tensor fd({4});
        for (int i = 0; i < 4; ++i) fd[i] = (gp[i] - gm[i]) / (2 * h);
        CHECK(rel_err(hv, fd) < 1e-4);
    }
    SUBCASE("symmetry of the Hessian bilinear form") {
        Rng rng(29);
        Network net = random_mlp(rng, {5, 6, 2}, Activation::softplus);
        Tensor x = random_tensor({5}, rng);
        Tensor u = random_tensor({5}, rng);
        Tensor v = random_tensor({5}, rng);
        auto f = [&](const Tensor& xt) { return pick(forward_logits(net, xt), 0); };
        Tensor hv = hessian_vector_product(f, x, v);
        Tensor hu = hessian_vector_product(f, x, u);
        double uhv = 0.0, vhu = 0.0;
        for (int i = 0; i < 5; ++i) {
            uhv += u[i] * hv[i];
            vhu += v[i] * hu[i];
        }
        CHECK(std::abs(uhv - vhu) < 1e-8 * (1.0 + std::abs(uhv)));
    }
}

TEST_CASE("error reporting") {
    SUBCASE("shape mismatch names the op and shapes") {
        CHECK_THROWS_WITH_AS(add(Tensor({2}, {1, 2}), Tensor({3}, {1, 2, 3})),
                             doctest::Contains("add"), Error);
        CHECK_THROWS_WITH_AS(matmul(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({3}, {1, 2, 3})),
                             doctest::Contains("matmul"), Error);
    }
    SUBCASE("backward rejects a scalar from another tape") {
        Tape tape;
        tape.watch(Tensor({2}, {1, 2}), "x");
        Tensor orphan;
        {
            Tape other;
            Tensor xt = other.watch(Tensor({2}, {1, 2}), "x");
            orphan = sum(xt);
        }
        CHECK_THROWS_AS(tape.backward(orphan, kWrtX), Error);
    }
    SUBCASE("backward rejects an unknown identifier") {
        Tape tape;
        Tensor xt = tape.watch(Tensor({2}, {1, 2}), "x");
        const std::array<std::string, 1> wrt{"nope"};
        CHECK_THROWS_WITH_AS(tape.backward(sum(xt), wrt), doctest::Contains("nope"), Error);
    }
    SUBCASE("backward needs a one-element scalar") {
        Tape tape;
        Tensor xt = tape.watch(Tensor({2}, {1, 2}), "x");
        CHECK_THROWS_AS(tape.backward(mul(xt, xt), kWrtX), Error);
    }
}
