#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradalign/autodiff.hpp"
#include "gradalign/criteria.hpp"
#include "gradalign/ops.hpp"
#include "support/test_helpers.hpp"

using namespace gradalign;
using namespace gradalign::testing;

namespace {

Network linear_net(const std::vector<double>& w0, const std::vector<double>& w1) {
    Network net = init_parameters(mlp_spec({2, 2}, Activation::identity), 0);
    net.layers[0].weight = Tensor({2, 2}, {w0[0], w0[1], w1[0], w1[1]});
    return net;
}

}  // namespace

TEST_CASE("gradient-distance criterion") {
    Rng rng(2);
    SUBCASE("linear nets have constant gradients") {
        Network net = linear_net({1.0, -2.0}, {0.5, 3.0});
        Tensor x({2}, {0.3, 0.7});
        Tensor delta({2}, {0.05, -0.02});
        CHECK(l2_criterion(net, x, 0, delta) == 0.0);
    }
    SUBCASE("zero perturbation gives zero") {
        Network net = random_mlp(rng, {3, 5, 2}, Activation::softplus);
        Tensor x = random_tensor({3}, rng);
        CHECK(l2_criterion(net, x, 1, Tensor::zeros({3})) == 0.0);
    }
    SUBCASE("last-layer scaling multiplies the value by exactly alpha") {
        for (int t = 0; t < 10; ++t) {
            Network net = random_mlp(rng, {3, 6, 2}, Activation::softplus);
            Tensor x = random_tensor({3}, rng);
            Tensor d = random_tensor({3}, rng, -0.1, 0.1);
            const double alpha = 3.7;
            double base = l2_criterion(net, x, 0, d);
            double scaled = l2_criterion(alpha_transform(net, net.parameterized_count() - 1, alpha),
                                         x, 0, d);
            CHECK(std::abs(scaled - alpha * base) < 1e-9 * std::max(1.0, std::abs(alpha * base)));
        }
    }
}

TEST_CASE("cosine criterion") {
    Rng rng(3);
    SUBCASE("zero perturbation gives zero") {
        Network net = random_mlp(rng, {3, 5, 2}, Activation::softplus);
        Tensor x = random_tensor({3}, rng);
        CHECK(std::abs(cos_criterion(net, x, 1, Tensor::zeros({3}))) < 1e-9);
    }
    SUBCASE("gradient direction unchanged along a level direction of x1^2") {
        // logit_0 = relu(x1)^2-ish: use identity activation and a quadratic
        // composition: g(x) = (w.x)^2 with w = e1 gives grad parallel to e1
        Network net = init_parameters(mlp_spec({2, 2}, Activation::identity), 0);
        net.layers[0].weight = Tensor({2, 2}, {1, 0, 0, 0});
        // moving along x2 leaves grad of logit 0 = (1, 0) unchanged
        Tensor x({2}, {1.0, 0.0});
        Tensor d({2}, {0.0, 0.8});
        CHECK(std::abs(cos_criterion(net, x, 0, d)) < 1e-9);
    }
    SUBCASE("orthogonal gradients score one half") {
        // relu gates flip between x and x + delta: grad rotates (1,0) -> (0,1)
        Network net = init_parameters(mlp_spec({2, 2, 2}, Activation::relu), 0);
        net.layers[0].weight = Tensor({2, 2}, {1, 0, 0, 1});
        net.layers[0].bias = Tensor({2}, {0, 0});
        net.layers[1].weight = Tensor({2, 2}, {1, 1, 0, 0});
        net.layers[1].bias = Tensor({2}, {0, 0});
        Tensor x({2}, {1.0, -1.0});    // grad of logit0 = (1, 0)
        Tensor d({2}, {-2.0, 2.0});    // at x+d grad = (0, 1)
        CHECK(cos_criterion(net, x, 0, d) == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("swapped endpoints give the identical value") {
        Network net = random_mlp(rng, {4, 7, 3}, Activation::softplus);
        Tensor x = random_tensor({4}, rng);
        Tensor d = random_tensor({4}, rng, -0.2, 0.2);
        Tensor x_shift(x.shape());
        Tensor d_neg(d.shape());
        for (int i = 0; i < 4; ++i) {
            x_shift[i] = x[i] + d[i];
            d_neg[i] = -d[i];
        }
        CHECK(cos_criterion(net, x, 2, d) == cos_criterion(net, x_shift, 2, d_neg));
    }
    SUBCASE("last-layer scaling leaves the value unchanged") {
        for (int t = 0; t < 10; ++t) {
            Network net = random_mlp(rng, {3, 6, 2}, Activation::softplus);
            Tensor x = random_tensor({3}, rng);
            Tensor d = random_tensor({3}, rng, -0.1, 0.1);
            double base = cos_criterion(net, x, 0, d);
            double scaled = cos_criterion(alpha_transform(net, net.parameterized_count() - 1, 0.1),
                                          x, 0, d);
            CHECK(std::abs(scaled - base) < 1e-9);
        }
    }
    SUBCASE("vanishing gradients raise the degeneracy flag instead of NaN") {
        Network net = init_parameters(mlp_spec({2, 2}, Activation::identity), 0);
        net.layers[0].weight = Tensor({2, 2}, {0, 0, 0, 0});
        Tape tape;
        CriterionTerm term =
            cos_criterion_taped(tape, net, nullptr, Tensor({2}, {1, 1}), 0, Tensor({2}, {0.1, 0}));
        CHECK(term.degenerate);
        CHECK(term.value.item() == 0.0);
    }
}

TEST_CASE("parameter gradients of both criteria match finite differences") {
    Rng rng(17);
    for (int trial = 0; trial < 3; ++trial) {
        Network net = random_mlp(rng, {3, 5, 2}, Activation::softplus);
        Tensor x = random_tensor({3}, rng);
        Tensor d = random_tensor({3}, rng, -0.15, 0.15);
        const int y = trial % 2;

        for (bool use_cos : {false, true}) {
            CAPTURE(use_cos);
            auto value = [&](const Network& n) {
                return use_cos ? cos_criterion(n, x, y, d) : l2_criterion(n, x, y, d);
            };
            // analytic parameter gradient through the taped criterion
            Tape tape(/*higher_order=*/true);
            TapedParams params = watch_parameters(tape, net);
            CriterionTerm term = use_cos ? cos_criterion_taped(tape, net, &params, x, y, d)
                                         : l2_criterion_taped(tape, net, &params, x, y, d);
            auto grads = tape.backward(term.value, params.ids).grads;

            // finite differences in parameter space
            Network probe = net.clone();
            auto slots = parameter_slots(probe);
            std::vector<double> fd(slots.size());
            const double h = 1e-5;
            for (std::size_t i = 0; i < slots.size(); ++i) {
                const double saved = *slots[i];
                *slots[i] = saved + h;
                const double up = value(probe);
                *slots[i] = saved - h;
                const double down = value(probe);
                *slots[i] = saved;
                fd[i] = (up - down) / (2.0 * h);
            }
            std::vector<double> analytic;
            for (std::size_t li = 0; li < net.layers.size(); ++li) {
                if (!net.layers[li].parameterized()) continue;
                const Tensor& gw = grads.at("w" + std::to_string(li));
                for (std::int64_t k = 0; k < gw.size(); ++k) analytic.push_back(gw[k]);
                if (net.layers[li].spec.has_bias) {
                    const Tensor& gb = grads.at("b" + std::to_string(li));
                    for (std::int64_t k = 0; k < gb.size(); ++k) analytic.push_back(gb[k]);
                }
            }
            REQUIRE(analytic.size() == fd.size());
            double scale_ref = 1e-8, worst = 0.0;
            for (std::size_t i = 0; i < fd.size(); ++i) scale_ref = std::max(scale_ref, std::abs(fd[i]));
            for (std::size_t i = 0; i < fd.size(); ++i)
                worst = std::max(worst, std::abs(analytic[i] - fd[i]));
            CHECK(worst / scale_ref < 1e-4);
        }
    }
}

TEST_CASE("curvature surrogate") {
    SUBCASE("linear nets have zero curvature") {
        Network net = linear_net({1, 2}, {3, 4});
        CHECK(hessian_surrogate(net, Tensor({2}, {0.5, 0.5}), 0, 4, 7) == 0.0);
    }
    SUBCASE("quadratic probe estimate approaches the exact value") {
        // g_0(x) = x1^2 + 1.5 x2^2 via identity-activation square trick is
        // awkward; instead check on a softplus net against the dense Hessian
        // assembled from HVPs with basis vectors.
        Rng rng(31);
        Network net = random_mlp(rng, {4, 8, 2}, Activation::softplus);
        Tensor x = random_tensor({4}, rng);
        double frob_sq = 0.0;
        for (int i = 0; i < 4; ++i) {
            Tensor e = Tensor::zeros({4});
            e[i] = 1.0;
            Tensor col = hessian_vector_product(
                [&](const Tensor& xt) { return pick(forward_logits(net, xt), 0); }, x, e);
            for (int j = 0; j < 4; ++j) frob_sq += col[j] * col[j];
        }
        const double exact = std::sqrt(frob_sq);
        const double est = hessian_surrogate(net, x, 0, 200, 3);
        CHECK(std::abs(est - exact) < 0.15 * exact);
    }
    SUBCASE("deterministic given the seed") {
        Rng rng(5);
        Network net = random_mlp(rng, {3, 5, 2}, Activation::softplus);
        Tensor x = random_tensor({3}, rng);
        CHECK(hessian_surrogate(net, x, 0, 3, 11) == hessian_surrogate(net, x, 0, 3, 11));
    }
    SUBCASE("relu networks are rejected with a curvature explanation") {
        Rng rng(6);
        Network net = random_mlp(rng, {3, 5, 2}, Activation::relu);
        CHECK_THROWS_WITH_AS(hessian_surrogate(net, random_tensor({3}, rng), 0, 1, 0),
                             doctest::Contains("zero"), Error);
    }
}

TEST_CASE("entropy regularizer") {
    SUBCASE("uniform output sits at log C") {
        Network net = init_parameters(mlp_spec({2, 2}, Activation::identity), 0);
        net.layers[0].weight = Tensor({2, 2}, {0, 0, 0, 0});
        CHECK(maxent_value(net, Tensor({2}, {1, 1})) ==
              doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("near one-hot output has near-zero entropy") {
        Network net = init_parameters(mlp_spec({2, 2}, Activation::identity), 0);
        net.layers[0].weight = Tensor({2, 2}, {100, 0, -100, 0});
        CHECK(maxent_value(net, Tensor({2}, {1, 0})) < 1e-12);
    }
    SUBCASE("sharpening the logits never raises the entropy") {
        Rng rng(8);
        Network net = random_mlp(rng, {3, 6, 4}, Activation::softplus);
        Tensor x = random_tensor({3}, rng);
        double prev = maxent_value(net, x);
        for (double temp : {0.8, 0.5, 0.2, 0.05}) {
            // temperature < 1 == scaling the last layer by 1/temp
            Network sharp = alpha_transform(net, net.parameterized_count() - 1, 1.0 / temp);
            double h = maxent_value(sharp, x);
            CHECK(h <= prev + 1e-12);
            prev = h;
        }
    }
}

TEST_CASE("curvature bound against the measured cosine criterion") {
    Rng rng(41);
    SUBCASE("linear nets give zero on both sides") {
        Network net = linear_net({1, -1}, {2, 0.5});
        Tensor d({2}, {1.0, 0.0});
        BoundPair p = crc_upper_bound(net, Tensor({2}, {0.2, 0.3}), 0, d, 1e-3);
        CHECK(std::abs(p.measured) < 1e-9);
        CHECK(p.bound == 0.0);
    }
    SUBCASE("shrinking epsilon keeps measured/eps^2 and bound/eps bounded") {
        Network net = random_mlp(rng, {3, 6, 2}, Activation::softplus);
        Tensor x = random_tensor({3}, rng);
        PerturbationSpec ps;
        ps.sampler = PerturbationSampler::unit_direction;
        ps.epsilon = 1.0;
        Tensor d = sample_perturbation(ps, {3}, rng);
        double prev_ratio2 = 0.0, prev_ratio1 = 0.0;
        for (double eps : {1e-2, 1e-3, 1e-4}) {
            BoundPair p = crc_upper_bound(net, x, 0, d, eps);
            double r2 = p.measured / (eps * eps);
            double r1 = p.bound / eps;
            CHECK(std::isfinite(r2));
            CHECK(std::isfinite(r1));
            if (prev_ratio2 > 0.0) CHECK(r2 < 10.0 * prev_ratio2 + 1.0);
            if (prev_ratio1 > 0.0) CHECK(std::abs(r1 - prev_ratio1) < 0.5 * prev_ratio1 + 1e-9);
            prev_ratio2 = r2;
            prev_ratio1 = r1;
        }
    }
    SUBCASE("the bound dominates the measured value at small radius") {
        int holds = 0, total = 0;
        for (int t = 0; t < 20; ++t) {
            Network net = random_mlp(rng, {4, 7, 3}, Activation::softplus);
            Tensor x = random_tensor({4}, rng);
            PerturbationSpec ps;
            ps.sampler = PerturbationSampler::unit_direction;
            ps.epsilon = 1.0;
            Tensor d = sample_perturbation(ps, {4}, rng);
            BoundPair p = crc_upper_bound(net, x, t % 3, d, 1e-3);
            if (p.degenerate) continue;
            ++total;
            if (p.measured <= p.bound * 1.01 + 1e-8) ++holds;
        }
        CHECK(holds == total);
    }
    SUBCASE("direction must have unit norm") {
        Network net = random_mlp(rng, {2, 3, 2}, Activation::softplus);
        CHECK_THROWS_AS(crc_upper_bound(net, Tensor({2}, {0, 0}), 0, Tensor({2}, {1, 1}), 1e-3),
                        Error);
    }
    SUBCASE("relu checkpoints are rejected") {
        Network net = random_mlp(rng, {2, 3, 2}, Activation::relu);
        CHECK_THROWS_AS(crc_upper_bound(net, Tensor({2}, {0, 0}), 0, Tensor({2}, {1, 0}), 1e-3),
                        Error);
    }
}

TEST_CASE("perturbation sampling") {
    Rng rng(13);
    PerturbationSpec ps;
    ps.epsilon = 0.25;
    SUBCASE("uniform ball respects the box") {
        Tensor d = sample_perturbation(ps, {100}, rng);
        for (std::int64_t i = 0; i < d.size(); ++i) CHECK(std::abs(d[i]) <= 0.25);
    }
    SUBCASE("unit directions have unit norm") {
        ps.sampler = PerturbationSampler::unit_direction;
        Tensor d = sample_perturbation(ps, {10}, rng);
        double n = 0.0;
        for (std::int64_t i = 0; i < d.size(); ++i) n += d[i] * d[i];
        CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-12));
    }
}
