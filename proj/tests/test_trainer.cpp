#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gradalign/data.hpp"
#include "gradalign/ops.hpp"
#include "gradalign/trainer.hpp"
#include "support/test_helpers.hpp"

using namespace gradalign;
using namespace gradalign::testing;

TEST_CASE("optimizer steps") {
    SUBCASE("zero gradients and zero decay leave parameters in place") {
        Network net = init_parameters(mlp_spec({2, 2}, Activation::relu), 1);
        Network before = net.clone();
        OptimizerState state;
        OptimizerConfig cfg;
        cfg.kind = OptimizerKind::adam;
        optimizer_step(net, {}, state, cfg);
        for (std::int64_t i = 0; i < net.layers[0].weight.size(); ++i)
            CHECK(net.layers[0].weight[i] == before.layers[0].weight[i]);
    }
    SUBCASE("plain gradient descent moves by lr times grad") {
        Network net = init_parameters(mlp_spec({1, 1}, Activation::identity), 0);
        net.layers[0].weight = Tensor({1, 1}, {1.0});
        OptimizerState state;
        OptimizerConfig cfg;
        cfg.kind = OptimizerKind::sgd;
        cfg.lr = 0.1;
        std::map<std::string, Tensor> grads{{"w0", Tensor({1, 1}, {1.0})}};
        optimizer_step(net, grads, state, cfg);
        CHECK(net.layers[0].weight[0] == doctest::Approx(0.9).epsilon(1e-15));
    }
    SUBCASE("one adaptive step against hand-computed moments") {
        // m1 = (1-b1) g, v1 = (1-b2) g^2, mhat = g, vhat = g^2
        // step = lr * g / (|g| + eps)
        Network net = init_parameters(mlp_spec({1, 1}, Activation::identity), 0);
        net.layers[0].weight = Tensor({1, 1}, {2.0});
        OptimizerState state;
        OptimizerConfig cfg;
        cfg.kind = OptimizerKind::adam;
        cfg.lr = 1e-3;
        const double g = 0.5;
        std::map<std::string, Tensor> grads{{"w0", Tensor({1, 1}, {g})}};
        optimizer_step(net, grads, state, cfg);
        const double expected = 2.0 - 1e-3 * g / (std::sqrt(g * g) + 1e-8);
        CHECK(net.layers[0].weight[0] == doctest::Approx(expected).epsilon(1e-12));
    }
    SUBCASE("decoupled weight decay shrinks even with zero gradient") {
        Network net = init_parameters(mlp_spec({1, 1}, Activation::identity), 0);
        net.layers[0].weight = Tensor({1, 1}, {1.0});
        OptimizerState state;
        OptimizerConfig cfg;
        cfg.kind = OptimizerKind::adamw;
        cfg.lr = 0.1;
        cfg.weight_decay = 0.5;
        std::map<std::string, Tensor> grads{{"w0", Tensor({1, 1}, {0.0})}};
        optimizer_step(net, grads, state, cfg);
        CHECK(net.layers[0].weight[0] == doctest::Approx(1.0 - 0.1 * 0.5 * 1.0).epsilon(1e-12));
    }
}

TEST_CASE("per-sample losses") {
    Rng rng(3);
    SUBCASE("zero weights reduce the combined loss to cross-entropy") {
        Network net = random_mlp(rng, {3, 5, 2}, Activation::softplus);
        Tensor x = random_tensor({3}, rng);
        Tensor d = random_tensor({3}, rng, -0.05, 0.05);
        RunConfig cfg;
        cfg.reg = Regularizer::l2cos;
        cfg.lambda_cos = 0.0;
        cfg.lambda_l2 = 0.0;
        Tape tape(true);
        TapedParams params = watch_parameters(tape, net);
        SampleLoss loss = sample_loss(tape, net, params, x, 0, &d, cfg, 0);
        NoRecord plain;
        double ce = cross_entropy(forward_logits(net, x), 0).item();
        CHECK(loss.total.item() == doctest::Approx(ce).epsilon(1e-12));
        CHECK(loss.l2_term == 0.0);
        CHECK(loss.cos_term == 0.0);
    }
    SUBCASE("linear nets contribute nothing beyond cross-entropy") {
        Network net = init_parameters(mlp_spec({2, 2}, Activation::identity), 1);
        Tensor x({2}, {0.2, 0.6});
        Tensor d({2}, {0.05, -0.01});
        RunConfig cfg;
        cfg.reg = Regularizer::l2cos;
        cfg.lambda_cos = 1.0;
        cfg.lambda_l2 = 0.1;
        cfg.detach_base_gradient = false;
        Tape tape(true);
        TapedParams params = watch_parameters(tape, net);
        SampleLoss loss = sample_loss(tape, net, params, x, 0, &d, cfg, 0);
        CHECK(loss.l2_term == 0.0);
        CHECK(std::abs(loss.cos_term) < 1e-9);
    }
    SUBCASE("cosine-only loss with zero perturbation is pure cross-entropy") {
        Network net = random_mlp(rng, {3, 5, 2}, Activation::softplus);
        Tensor x = random_tensor({3}, rng);
        Tensor d = Tensor::zeros({3});
        RunConfig cfg;
        cfg.reg = Regularizer::cos;
        cfg.lambda_cos = 2.0;
        Tape tape(true);
        TapedParams params = watch_parameters(tape, net);
        SampleLoss loss = sample_loss(tape, net, params, x, 1, &d, cfg, 0);
        NoRecord plain;
        double ce = cross_entropy(forward_logits(net, x), 1).item();
        CHECK(std::abs(loss.total.item() - ce) < 1e-8);
    }
    SUBCASE("curvature loss on a linear net is pure cross-entropy") {
        Network net = init_parameters(mlp_spec({2, 3}, Activation::identity), 2);
        Tensor x({2}, {0.5, -0.5});
        RunConfig cfg;
        cfg.reg = Regularizer::hessian;
        cfg.lambda = 10.0;
        Tape tape(true);
        TapedParams params = watch_parameters(tape, net);
        SampleLoss loss = sample_loss(tape, net, params, x, 0, nullptr, cfg, 5);
        NoRecord plain;
        double ce = cross_entropy(forward_logits(net, x), 0).item();
        CHECK(loss.total.item() == doctest::Approx(ce).epsilon(1e-12));
        CHECK(loss.extra_term == 0.0);
    }
    SUBCASE("entropy term of a uniform-output net sits at its maximum") {
        Network net = init_parameters(mlp_spec({2, 4}, Activation::identity), 0);
        for (std::int64_t i = 0; i < net.layers[0].weight.size(); ++i)
            net.layers[0].weight[i] = 0.0;
        RunConfig cfg;
        cfg.reg = Regularizer::maxent;
        cfg.lambda = 1.0;
        Tape tape(false);
        TapedParams params = watch_parameters(tape, net);
        SampleLoss loss = sample_loss(tape, net, params, Tensor({2}, {1, 1}), 0, nullptr, cfg, 0);
        CHECK(loss.extra_term == doctest::Approx(-std::log(4.0)).epsilon(1e-12));
    }
}

TEST_CASE("distillation loss") {
    Rng rng(13);
    Network teacher = random_mlp(rng, {3, 5, 2}, Activation::softplus);
    SUBCASE("identical student at zero radius scores zero") {
        RunConfig cfg;
        cfg.reg = Regularizer::atex;
        cfg.lambda = 3.0;
        cfg.atex_epsilon = 0.0;
        Rng loss_rng(1);
        Tape tape(false);
        TapedParams params = watch_parameters(tape, teacher);
        SampleLoss loss = atex_loss(tape, teacher, teacher, params, random_tensor({3}, rng), cfg,
                                    loss_rng);
        CHECK(std::abs(loss.total.item()) < 1e-10);
    }
    SUBCASE("zero weight keeps only the distillation term") {
        Network student = random_mlp(rng, {3, 5, 2}, Activation::softplus);
        RunConfig cfg;
        cfg.reg = Regularizer::atex;
        cfg.lambda = 0.0;
        Rng loss_rng(2);
        Tensor x = random_tensor({3}, rng);
        Tape tape(false);
        TapedParams params = watch_parameters(tape, student);
        SampleLoss loss = atex_loss(tape, teacher, student, params, x, cfg, loss_rng);
        CHECK(loss.total.item() == doctest::Approx(loss.ce).epsilon(1e-12));
        CHECK(loss.extra_term == 0.0);
        CHECK(loss.ce > 0.0);  // KL between different nets
    }
}

TEST_CASE("triplet attribution loss") {
    SUBCASE("equal distances give ln 2") {
        // zero-weight net: both class gradients vanish, both distances are 1
        Network net = init_parameters(mlp_spec({2, 2}, Activation::identity), 0);
        for (std::int64_t i = 0; i < net.layers[0].weight.size(); ++i)
            net.layers[0].weight[i] = 0.0;
        Tape tape(true);
        Tensor l = iga_attr_loss_taped(tape, net, nullptr, Tensor({2}, {0.6, 0.8}), 0);
        CHECK(l.item() == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    }
    SUBCASE("aligned true gradient and anti-aligned rival") {
        // w_true = x, w_rival = -x: distances 0 and 2
        Network net = init_parameters(mlp_spec({2, 2}, Activation::identity), 0);
        net.layers[0].weight = Tensor({2, 2}, {0.6, 0.8, -0.6, -0.8});
        Tape tape(true);
        Tensor l = iga_attr_loss_taped(tape, net, nullptr, Tensor({2}, {0.6, 0.8}), 0);
        CHECK(l.item() == doctest::Approx(std::log(1.0 + std::exp(-2.0))).epsilon(1e-9));
    }
}

TEST_CASE("learning-rate schedule") {
    RunConfig cfg;
    cfg.optimizer.lr = 1e-3;
    cfg.lr_milestones = {100, 150};
    cfg.lr_decay = 0.1;
    CHECK(lr_at_epoch(cfg, 1) == 1e-3);
    CHECK(lr_at_epoch(cfg, 99) == 1e-3);
    CHECK(lr_at_epoch(cfg, 100) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(lr_at_epoch(cfg, 150) == doctest::Approx(1e-5).epsilon(1e-12));
    double prev = 1e9;
    for (int e = 1; e <= 200; ++e) {
        CHECK(lr_at_epoch(cfg, e) <= prev);
        prev = lr_at_epoch(cfg, e);
    }
    RunConfig bad = cfg;
    bad.lr_milestones = {100, 100};
    Network net = init_parameters(mlp_spec({2, 2}, Activation::relu), 0);
    Dataset ds = make_moons_2d(4, 0.1, 0);
    CHECK_THROWS_AS(train(net, ds, ds, bad), Error);
}

TEST_CASE("training loop") {
    SUBCASE("zero epochs leave the network untouched") {
        Network net = init_parameters(mlp_spec({2, 8, 2}, Activation::softplus), 5);
        Network before = net.clone();
        Dataset ds = make_moons_2d(16, 0.1, 1);
        RunConfig cfg;
        cfg.epochs = 0;
        TrainReport rep = train(net, ds, ds, cfg);
        CHECK(rep.epochs.empty());
        for (std::int64_t i = 0; i < net.layers[0].weight.size(); ++i)
            CHECK(net.layers[0].weight[i] == before.layers[0].weight[i]);
    }
    SUBCASE("plain training separates the half-circles") {
        Dataset full = make_moons_2d(220, 0.1, 3);
        auto [tr, te] = split_train_test(full, 0.25, 3);
        Network net = init_parameters(mlp_spec({2, 16, 2}, Activation::softplus), 7);
        RunConfig cfg;
        cfg.reg = Regularizer::ce;
        cfg.epochs = 200;
        cfg.batch_size = 32;
        cfg.optimizer.kind = OptimizerKind::adam;
        cfg.optimizer.lr = 5e-3;
        cfg.seed = 11;
        TrainReport rep = train(net, tr, te, cfg);
        CHECK(rep.final_test_accuracy > 0.95);
        for (const auto& e : rep.epochs) {
            CHECK(std::isfinite(e.total));
            CHECK(std::abs(e.total - (e.ce + e.l2_term + e.cos_term + e.extra_term)) < 1e-12);
        }
    }
    SUBCASE("identical config and seed reproduce the checkpoint bit for bit") {
        Dataset ds = make_moons_2d(40, 0.1, 5);
        RunConfig cfg;
        cfg.reg = Regularizer::l2cos;
        cfg.lambda_cos = 0.5;
        cfg.lambda_l2 = 0.05;
        cfg.perturbation.epsilon = 0.05;
        cfg.epochs = 3;
        cfg.batch_size = 8;
        cfg.seed = 21;
        namespace fs = std::filesystem;
        fs::create_directories("run_a");
        fs::create_directories("run_b");
        Network a = init_parameters(mlp_spec({2, 8, 2}, Activation::softplus), 9);
        Network b = init_parameters(mlp_spec({2, 8, 2}, Activation::softplus), 9);
        train(a, ds, ds, cfg, "run_a");
        train(b, ds, ds, cfg, "run_b");
        {
            std::ifstream f1("run_a/checkpoint.bin", std::ios::binary);
            std::ifstream f2("run_b/checkpoint.bin", std::ios::binary);
            std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
            std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
            CHECK(b1 == b2);
            CHECK(!b1.empty());
        }
        {
            // loss logs agree bit for bit outside the wall-time column
            std::ifstream f1("run_a/loss_log.csv"), f2("run_b/loss_log.csv");
            std::string l1, l2;
            while (std::getline(f1, l1) && std::getline(f2, l2)) {
                CHECK(l1.substr(0, l1.rfind(',')) == l2.substr(0, l2.rfind(',')));
            }
        }
        fs::remove_all("run_a");
        fs::remove_all("run_b");
    }
    SUBCASE("loss log carries the documented columns") {
        Dataset ds = make_moons_2d(16, 0.1, 2);
        Network net = init_parameters(mlp_spec({2, 4, 2}, Activation::softplus), 1);
        RunConfig cfg;
        cfg.epochs = 1;
        cfg.batch_size = 8;
        std::filesystem::create_directories("run_c");
        train(net, ds, ds, cfg, "run_c");
        std::ifstream f("run_c/loss_log.csv");
        std::string header;
        std::getline(f, header);
        CHECK(header == "epoch,ce,l2_term,cos_term,acc,seconds");
        std::filesystem::remove_all("run_c");
    }
    SUBCASE("divergence aborts with the component values named") {
        Dataset ds = make_moons_2d(16, 0.1, 2);
        Network net = init_parameters(mlp_spec({2, 4, 2}, Activation::softplus), 1);
        RunConfig cfg;
        cfg.epochs = 50;
        cfg.batch_size = 16;
        cfg.optimizer.kind = OptimizerKind::sgd;
        cfg.optimizer.lr = 1e18;
        CHECK_THROWS_WITH_AS(train(net, ds, ds, cfg), doctest::Contains("non-finite"), Error);
    }
}
