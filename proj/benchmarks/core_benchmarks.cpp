/**
 * @file core_benchmarks.cpp
 * @brief Microbenchmarks for the hot kernels: convolution, warping, backward.
 */
#include <benchmark/benchmark.h>

#include "lagcast/advection.hpp"
#include "lagcast/autodiff.hpp"
#include "lagcast/rng.hpp"
#include "lagcast/unet.hpp"

using namespace lagcast;
using ad::Var;

namespace {

TensorF randn(Rng& rng, Shape s) {
    TensorF t(s);
    for (auto& v : t.vec()) v = static_cast<float>(rng.gaussian());
    return t;
}

void BM_conv2d_forward(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    Rng rng(1);
    auto x = Var<float>::constant(randn(rng, {4, c, 64, 64}));
    auto w = Var<float>::constant(randn(rng, {c, c, 3, 3}));
    auto b = Var<float>::constant(randn(rng, {1, c, 1, 1}));
    for (auto _ : state) {
        ad::NoGradGuard ng;
        auto y = ad::conv2d(x, w, b, 1, 1);
        benchmark::DoNotOptimize(y.value().data());
    }
    const double flops = 2.0 * 4 * c * c * 9 * 64 * 64;
    state.counters["GFLOP/s"] =
        benchmark::Counter(flops * static_cast<double>(state.iterations()) / 1e9, benchmark::Counter::kIsRate);
}

void BM_conv2d_train_step(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    Rng rng(2);
    auto x = Var<float>::constant(randn(rng, {4, c, 64, 64}));
    auto w = Var<float>::leaf(randn(rng, {c, c, 3, 3}), true);
    auto b = Var<float>::leaf(randn(rng, {1, c, 1, 1}), true);
    for (auto _ : state) {
        w.zero_grad();
        b.zero_grad();
        auto y = ad::mean_all(ad::conv2d(x, w, b, 1, 1));
        ad::backward(y);
        benchmark::DoNotOptimize(w.node()->grad.data());
    }
}

void BM_grid_sample(benchmark::State& state) {
    Rng rng(3);
    auto x = Var<float>::constant(randn(rng, {4, 6, 64, 64}));
    TensorF coords(Shape{4, 2, 64, 64});
    for (int b = 0; b < 4; ++b)
        for (int h = 0; h < 64; ++h)
            for (int w = 0; w < 64; ++w) {
                coords.at(b, 0, h, w) = static_cast<float>(w + rng.uniform(-3.0, 3.0));
                coords.at(b, 1, h, w) = static_cast<float>(h + rng.uniform(-3.0, 3.0));
            }
    auto cv = Var<float>::constant(coords);
    for (auto _ : state) {
        ad::NoGradGuard ng;
        auto y = ad::grid_sample_bilinear(x, cv);
        benchmark::DoNotOptimize(y.value().data());
    }
}

void BM_extrapolate(benchmark::State& state) {
    const int steps = static_cast<int>(state.range(0));
    Rng rng(4);
    auto field = Var<float>::constant(randn(rng, {4, 1, 64, 64}));
    TensorF motion(Shape{4, 2, 64, 64});
    for (auto& v : motion.vec()) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    auto mv = Var<float>::constant(motion);
    for (auto _ : state) {
        ad::NoGradGuard ng;
        auto y = advect::extrapolate(field, mv, steps);
        benchmark::DoNotOptimize(y.value().data());
    }
}

void BM_unet_forward(benchmark::State& state) {
    Rng rng(5);
    nets::UNetConfig cfg;
    cfg.in_channels = 6;
    cfg.out_channels = 2;
    cfg.depth = 3;
    cfg.base_channels = 16;
    ParamStore<float> store;
    Rng init(1);
    nets::UNet<float> net(cfg, store, "bench.", init);
    auto x = Var<float>::constant(randn(rng, {4, 6, 64, 64}));
    for (auto _ : state) {
        ad::NoGradGuard ng;
        auto y = net.forward(x);
        benchmark::DoNotOptimize(y.value().data());
    }
}

void BM_unet_train_step(benchmark::State& state) {
    Rng rng(6);
    nets::UNetConfig cfg;
    cfg.in_channels = 6;
    cfg.out_channels = 2;
    cfg.depth = 3;
    cfg.base_channels = 16;
    ParamStore<float> store;
    Rng init(1);
    nets::UNet<float> net(cfg, store, "bench.", init);
    auto x = Var<float>::constant(randn(rng, {4, 6, 64, 64}));
    for (auto _ : state) {
        store.zero_grad();
        auto loss = ad::mean_all(net.forward(x));
        ad::backward(loss);
        benchmark::DoNotOptimize(loss.value().data());
    }
}

BENCHMARK(BM_conv2d_forward)->Arg(16)->Arg(32)->Arg(64);
BENCHMARK(BM_conv2d_train_step)->Arg(16)->Arg(32);
BENCHMARK(BM_grid_sample);
BENCHMARK(BM_extrapolate)->Arg(1)->Arg(6);
BENCHMARK(BM_unet_forward);
BENCHMARK(BM_unet_train_step);

}  // namespace

BENCHMARK_MAIN();
