#include <benchmark/benchmark.h>

#include "gradalign/criteria.hpp"
#include "gradalign/network.hpp"
#include "gradalign/ops.hpp"
#include "gradalign/rng.hpp"

using namespace gradalign;

namespace {

Tensor random_input(const Shape& shape, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(0.0, 1.0);
    return t;
}

void BM_ForwardMini(benchmark::State& state) {
    Network net = init_parameters(lenet_mini_spec(1, 16, 4), 1);
    Tensor x = random_input({1, 16, 16}, 2);
    for (auto _ : state) {
        NoRecord plain;
        benchmark::DoNotOptimize(forward_logits(net, x));
    }
}
BENCHMARK(BM_ForwardMini);

void BM_BackwardMini(benchmark::State& state) {
    Network net = init_parameters(lenet_mini_spec(1, 16, 4), 1);
    Tensor x = random_input({1, 16, 16}, 2);
    for (auto _ : state) {
        Tape tape;
        TapedParams params = watch_parameters(tape, net);
        Tensor loss = cross_entropy(forward_logits(net, params, x), 0);
        benchmark::DoNotOptimize(tape.backward(loss, params.ids));
    }
}
BENCHMARK(BM_BackwardMini);

void BM_CriterionPair(benchmark::State& state) {
    const bool detach = state.range(0) != 0;
    Network net = init_parameters(lenet_mini_spec(1, 16, 4), 1);
    Tensor x = random_input({1, 16, 16}, 2);
    Rng rng(3);
    PerturbationSpec ps;
    ps.epsilon = 8.0 / 255.0;
    for (auto _ : state) {
        Tensor delta = sample_perturbation(ps, x.shape(), rng);
        Tape tape(/*higher_order=*/true);
        TapedParams params = watch_parameters(tape, net);
        CriterionPair pair = l2_cos_criteria_taped(tape, net, &params, x, 0, delta, detach);
        Tensor total = add(pair.l2.value, pair.cos.value);
        benchmark::DoNotOptimize(tape.backward(total, params.ids));
    }
}
BENCHMARK(BM_CriterionPair)->Arg(0)->Arg(1);  // 0: full graph, 1: detached base gradient

void BM_HessianProbe(benchmark::State& state) {
    Network net = init_parameters(lenet_mini_spec(1, 16, 4), 1);
    Tensor x = random_input({1, 16, 16}, 2);
    std::uint64_t seed = 0;
    for (auto _ : state) {
        Tape tape(/*higher_order=*/true);
        TapedParams params = watch_parameters(tape, net);
        Tensor h = hessian_surrogate_taped(tape, net, &params, x, 0, 1, seed++);
        benchmark::DoNotOptimize(tape.backward(h, params.ids));
    }
}
BENCHMARK(BM_HessianProbe);

void BM_Conv2d(benchmark::State& state) {
    Rng rng(7);
    Tensor x = random_input({8, 16, 16}, 4);
    Tensor w(Shape{8, 8, 3, 3});
    for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-0.2, 0.2);
    for (auto _ : state) {
        NoRecord plain;
        benchmark::DoNotOptimize(conv2d(x, w, 1));
    }
}
BENCHMARK(BM_Conv2d);

}  // namespace

BENCHMARK_MAIN();
