// Serial reference kernels against the OpenMP production kernels.

#include <benchmark/benchmark.h>

#include <random>

#include "dmad/core/kernels.hpp"

using namespace dmad;
using namespace dmad::kernels;

namespace {

Tensor<float> random_tensor(Shape shape, uint64_t seed, float lo = -1.f, float hi = 1.f) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(lo, hi);
    Tensor<float> t(std::move(shape));
    for (auto& v : t.vec()) v = u(rng);
    return t;
}

// Encoder-stage shapes at batch 8: (in_channels, extent, out_channels).
ConvGeometry conv_case(int64_t cin, int64_t extent, int64_t cout, int64_t stride) {
    return ConvGeometry::make({8, cin, extent, extent}, {cout, cin, 3, 3}, stride, 1);
}

template <bool Parallel>
void BM_Conv2dForward(benchmark::State& state) {
    const auto g = conv_case(state.range(0), state.range(1), state.range(2), state.range(3));
    auto in = random_tensor({g.batch, g.in_channels, g.in_h, g.in_w}, 1);
    auto k = random_tensor({g.out_channels, g.in_channels, 3, 3}, 2);
    Tensor<float> out({g.batch, g.out_channels, g.out_h, g.out_w});
    for (auto _ : state) {
        if constexpr (Parallel)
            parallel::conv2d_forward(g, in.ptr(), k.ptr(), out.ptr());
        else
            serial::conv2d_forward(g, in.ptr(), k.ptr(), out.ptr());
        benchmark::DoNotOptimize(out.ptr());
    }
    state.SetItemsProcessed(state.iterations() * g.batch * g.out_channels * g.out_h * g.out_w * g.in_channels * 9);
}

template <bool Parallel>
void BM_Conv2dBackward(benchmark::State& state) {
    const auto g = conv_case(state.range(0), state.range(1), state.range(2), state.range(3));
    auto in = random_tensor({g.batch, g.in_channels, g.in_h, g.in_w}, 1);
    auto k = random_tensor({g.out_channels, g.in_channels, 3, 3}, 2);
    auto go = random_tensor({g.batch, g.out_channels, g.out_h, g.out_w}, 3);
    Tensor<float> gi(in.shape()), gk(k.shape());
    for (auto _ : state) {
        if constexpr (Parallel) {
            parallel::conv2d_backward_input(g, go.ptr(), k.ptr(), gi.ptr());
            parallel::conv2d_backward_kernel(g, go.ptr(), in.ptr(), gk.ptr());
        } else {
            serial::conv2d_backward_input(g, go.ptr(), k.ptr(), gi.ptr());
            serial::conv2d_backward_kernel(g, go.ptr(), in.ptr(), gk.ptr());
        }
        benchmark::DoNotOptimize(gi.ptr());
        benchmark::DoNotOptimize(gk.ptr());
    }
}

template <bool Parallel>
void BM_GridSample(benchmark::State& state) {
    const int64_t n = 8, c = state.range(0), hw = state.range(1);
    auto in = random_tensor({n, c, hw, hw}, 4);
    auto grid = random_tensor({n, hw, hw, 2}, 5, -1.05f, 1.05f);
    const auto g = SampleGeometry::make(in.shape(), grid.shape());
    Tensor<float> out({n, c, hw, hw});
    auto go = random_tensor(out.shape(), 6);
    Tensor<float> gi(in.shape()), gg(grid.shape());
    for (auto _ : state) {
        if constexpr (Parallel) {
            parallel::grid_sample_forward(g, in.ptr(), grid.ptr(), out.ptr());
            parallel::grid_sample_backward(g, in.ptr(), grid.ptr(), go.ptr(), gi.ptr(), gg.ptr());
        } else {
            serial::grid_sample_forward(g, in.ptr(), grid.ptr(), out.ptr());
            serial::grid_sample_backward(g, in.ptr(), grid.ptr(), go.ptr(), gi.ptr(), gg.ptr());
        }
        benchmark::DoNotOptimize(out.ptr());
    }
    state.SetItemsProcessed(state.iterations() * n * c * hw * hw);
}

template <bool Parallel>
void BM_Upsample(benchmark::State& state) {
    const int64_t planes = 16, h = state.range(0), out = 64;
    auto in = random_tensor({planes, h, h}, 7);
    Tensor<float> o({planes, out, out});
    Tensor<float> gi(in.shape());
    for (auto _ : state) {
        if constexpr (Parallel) {
            parallel::upsample_forward(planes, h, h, out, out, in.ptr(), o.ptr());
            parallel::upsample_backward(planes, h, h, out, out, o.ptr(), gi.ptr());
        } else {
            serial::upsample_forward(planes, h, h, out, out, in.ptr(), o.ptr());
            serial::upsample_backward(planes, h, h, out, out, o.ptr(), gi.ptr());
        }
        benchmark::DoNotOptimize(o.ptr());
    }
}

void conv_args(benchmark::internal::Benchmark* b) {
    b->Args({1, 64, 32, 2})->Args({32, 32, 64, 2})->Args({64, 16, 16, 1})->Args({3, 64, 16, 1});
    b->ArgNames({"cin", "hw", "cout", "stride"})->Unit(benchmark::kMicrosecond);
}

}  // namespace

BENCHMARK(BM_Conv2dForward<false>)->Name("conv2d_forward/serial")->Apply(conv_args);
BENCHMARK(BM_Conv2dForward<true>)->Name("conv2d_forward/parallel")->Apply(conv_args);
BENCHMARK(BM_Conv2dBackward<false>)->Name("conv2d_backward/serial")->Apply(conv_args);
BENCHMARK(BM_Conv2dBackward<true>)->Name("conv2d_backward/parallel")->Apply(conv_args);
BENCHMARK(BM_GridSample<false>)->Name("grid_sample/serial")->Args({1, 64})->Args({16, 64})->ArgNames({"c", "hw"})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_GridSample<true>)->Name("grid_sample/parallel")->Args({1, 64})->Args({16, 64})->ArgNames({"c", "hw"})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Upsample<false>)->Name("upsample/serial")->Arg(4)->Arg(16)->ArgName("h")->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Upsample<true>)->Name("upsample/parallel")->Arg(4)->Arg(16)->ArgName("h")->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
