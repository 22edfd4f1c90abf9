#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "dmad/core/gradcheck.hpp"
#include "dmad/core/kernels.hpp"
#include "dmad/core/ops.hpp"
#include "dmad/core/optim.hpp"
#include "oracles.hpp"
#include "suites.hpp"

using namespace dmad;
using VarD = Var<double>;

namespace {

Tensor<double> run_conv(const Tensor<double>& x, const Tensor<double>& k, int64_t stride, int64_t pad) {
    return ops::conv2d(VarD::constant(x), VarD::constant(k), stride, pad).value();
}

double inner(const Tensor<double>& a, const Tensor<double>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace

TEST_CASE("conv2d: hand examples") {
    const Tensor<double> ones({1, 1, 3, 3}, 1.0);
    auto out = run_conv(ones, ones, 1, 0);
    REQUIRE(out.shape() == Shape{1, 1, 1, 1});
    CHECK(out[0] == 9.0);

    const Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor<double> k({1, 1, 1, 1}, {2});
    CHECK(run_conv(x, k, 1, 0) == Tensor<double>({1, 1, 2, 2}, {2, 4, 6, 8}));
}

TEST_CASE("conv2d: output extent and shape diagnostics") {
    std::mt19937_64 rng(1);
    auto x = oracle::random_tensor({2, 3, 7, 6}, rng);
    auto k = oracle::random_tensor({4, 3, 3, 2}, rng);
    auto out = run_conv(x, k, 2, 1);
    CHECK(out.shape() == Shape{2, 4, (7 + 2 - 3) / 2 + 1, (6 + 2 - 2) / 2 + 1});

    auto bad = oracle::random_tensor({4, 2, 3, 3}, rng);
    try {
        run_conv(x, bad, 1, 0);
        FAIL("expected rejection");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("channel") != std::string::npos);
    }
    auto too_tall = oracle::random_tensor({1, 3, 9, 1}, rng);
    try {
        run_conv(x, too_tall, 1, 0);
        FAIL("expected rejection");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("height") != std::string::npos);
    }
}

TEST_CASE("conv2d: serial, parallel and oracle agree on random instances") {
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<int64_t> ext(1, 8), small(1, 4), ks(1, 3), st(1, 2), pd(0, 1);
    for (int trial = 0; trial < 120; ++trial) {
        const int64_t n = std::min<int64_t>(small(rng), 2), c = small(rng), f = small(rng);
        const int64_t h = std::max<int64_t>(ext(rng), 3), w = std::max<int64_t>(ext(rng), 3);
        const int64_t kh = ks(rng), kw = ks(rng), s = st(rng), p = pd(rng);
        auto x = oracle::random_tensor({n, c, h, w}, rng);
        auto k = oracle::random_tensor({f, c, kh, kw}, rng);
        const auto expected = oracle::conv2d(x, k, s, p);
        const auto g = kernels::ConvGeometry::make(x.shape(), k.shape(), s, p);
        Tensor<double> a(expected.shape()), b(expected.shape());
        kernels::serial::conv2d_forward(g, x.ptr(), k.ptr(), a.ptr());
        kernels::parallel::conv2d_forward(g, x.ptr(), k.ptr(), b.ptr());
        CHECK(oracle::max_abs_diff(a, expected) < 1e-10);
        CHECK(oracle::max_abs_diff(b, expected) < 1e-10);

        // Both backward kernels are the adjoint of the forward map.
        auto gy = oracle::random_tensor(expected.shape(), rng);
        Tensor<double> gx_s(x.shape()), gx_p(x.shape()), gk_s(k.shape()), gk_p(k.shape());
        kernels::serial::conv2d_backward_input(g, gy.ptr(), k.ptr(), gx_s.ptr());
        kernels::parallel::conv2d_backward_input(g, gy.ptr(), k.ptr(), gx_p.ptr());
        kernels::serial::conv2d_backward_kernel(g, gy.ptr(), x.ptr(), gk_s.ptr());
        kernels::parallel::conv2d_backward_kernel(g, gy.ptr(), x.ptr(), gk_p.ptr());
        CHECK(oracle::max_abs_diff(gx_s, gx_p) < 1e-10);
        CHECK(oracle::max_abs_diff(gk_s, gk_p) < 1e-10);
        CHECK(std::abs(inner(expected, gy) - inner(x, gx_p)) < 1e-9);
        CHECK(std::abs(inner(expected, gy) - inner(k, gk_p)) < 1e-9);
    }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
    std::mt19937_64 rng(5);
    auto x = oracle::random_tensor({2, 3, 4, 5}, rng);   // transpose input
    auto k = oracle::random_tensor({3, 2, 4, 4}, rng);   // [Cin, Cout, kh, kw]
    auto y = ops::conv_transpose2d(VarD::constant(x), VarD::constant(k), 2, 1).value();
    CHECK(y.shape() == Shape{2, 2, 8, 10});
    auto z = oracle::random_tensor(y.shape(), rng);
    auto cz = oracle::conv2d(z, k, 2, 1);
    CHECK(std::abs(inner(y, z) - inner(x, cz)) < 1e-10);
}

TEST_CASE("grid_sample: identity grid is exact") {
    std::mt19937_64 rng(3);
    for (auto [h, w] : {std::pair<int64_t, int64_t>{2, 2}, {5, 7}, {16, 16}, {64, 64}, {31, 9}}) {
        auto x = oracle::random_tensor({2, 3, h, w}, rng);
        auto y = ops::grid_sample(VarD::constant(x), VarD::constant(ops::identity_grid<double>(2, h, w))).value();
        CHECK(y == x);
        auto xf = x.cast<float>();
        auto yf = ops::grid_sample(Var<float>::constant(xf), Var<float>::constant(ops::identity_grid<float>(2, h, w)))
                      .value();
        CHECK(yf == xf);
    }
}

TEST_CASE("grid_sample: one-pixel shift with border clamp") {
    const Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
    auto grid = ops::identity_grid<double>(1, 2, 2);
    for (size_t i = 0; i < grid.size(); i += 2) grid[i] += 2.0;  // one pixel = 2/(W-1)
    auto y = ops::grid_sample(VarD::constant(x), VarD::constant(grid)).value();
    CHECK(y == Tensor<double>({1, 1, 2, 2}, {2, 2, 4, 4}));
}

TEST_CASE("grid_sample: batch mismatch rejected") {
    CHECK_THROWS_AS(ops::grid_sample(VarD::constant(Tensor<double>({2, 1, 3, 3})),
                                     VarD::constant(ops::identity_grid<double>(1, 3, 3))),
                    ShapeError);
}

TEST_CASE("grid_sample: random instances match the tent-weight oracle") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int64_t> ext(2, 7);
    for (int trial = 0; trial < 120; ++trial) {
        const int64_t h = ext(rng), w = ext(rng), oh = ext(rng), ow = ext(rng);
        auto x = oracle::random_tensor({2, 2, h, w}, rng);
        auto grid = oracle::random_tensor({2, oh, ow, 2}, rng, -1.2, 1.2);
        const auto expected = oracle::grid_sample(x, grid);
        const auto g = kernels::SampleGeometry::make(x.shape(), grid.shape());
        Tensor<double> a(expected.shape()), b(expected.shape());
        kernels::serial::grid_sample_forward(g, x.ptr(), grid.ptr(), a.ptr());
        kernels::parallel::grid_sample_forward(g, x.ptr(), grid.ptr(), b.ptr());
        CHECK(oracle::max_abs_diff(a, expected) < 1e-10);
        CHECK(oracle::max_abs_diff(b, expected) < 1e-10);
    }
}

TEST_CASE("grid_sample: gradients match central differences") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        auto x = oracle::random_tensor({1, 2, 5, 5}, rng);
        auto grid = oracle::random_tensor({1, 5, 5, 2}, rng, -0.95, 0.95);
        auto weights = oracle::random_tensor({1, 2, 5, 5}, rng);
        auto report = check_gradients(
            [&](const std::vector<VarD>& v) {
                return ops::sum(ops::mul(ops::grid_sample(v[0], v[1]), VarD::constant(weights)));
            },
            {x, grid});
        INFO(report.summary());
        CHECK(report.max_rel_error() < 1e-5);
    }
}

TEST_CASE("grid_sample: integer shift then its negation restores interior pixels") {
    std::mt19937_64 rng(13);
    const int64_t h = 9, w = 11;
    auto x = oracle::random_tensor({1, 1, h, w}, rng);
    auto shifted = [&](const Tensor<double>& img, double dx, double dy) {
        auto grid = ops::identity_grid<double>(1, h, w);
        for (size_t i = 0; i < grid.size(); i += 2) {
            grid[i] += dx * 2.0 / double(w - 1);
            grid[i + 1] += dy * 2.0 / double(h - 1);
        }
        return ops::grid_sample(VarD::constant(img), VarD::constant(grid)).value();
    };
    auto back = shifted(shifted(x, 2, -1), -2, 1);
    for (int64_t y = 1; y < h - 1; ++y)
        for (int64_t xx = 2; xx < w - 2; ++xx) CHECK(back.at(0, 0, y, xx) == doctest::Approx(x.at(0, 0, y, xx)).epsilon(1e-12));
}

TEST_CASE("bilinear_upsample: examples and oracle") {
    auto c = ops::bilinear_upsample(VarD::constant(Tensor<double>({1, 2, 3, 2}, 0.3)), 9, 7).value();
    for (double v : c.vec()) CHECK(v == 0.3);

    auto r = ops::bilinear_upsample(VarD::constant(Tensor<double>({1, 1, 2, 2}, {0, 1, 0, 1})), 2, 4).value();
    const double expected[] = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
    for (int row = 0; row < 2; ++row)
        for (int col = 0; col < 4; ++col) CHECK(r.at(0, 0, row, col) == doctest::Approx(expected[col]).epsilon(1e-15));

    std::mt19937_64 rng(21);
    auto x = oracle::random_tensor({2, 2, 4, 3}, rng);
    CHECK(ops::bilinear_upsample(VarD::constant(x), 4, 3).value() == x);
    CHECK(oracle::max_abs_diff(ops::bilinear_upsample(VarD::constant(x), 13, 8).value(), oracle::upsample(x, 13, 8)) <
          1e-12);
    CHECK_THROWS_AS(ops::bilinear_upsample(VarD::constant(x), 3, 8), ShapeError);

    Tensor<double> a({6, 9 * 7}), b({6, 9 * 7});
    kernels::serial::upsample_forward<double>(4, 4, 3, 9, 7, x.ptr(), a.ptr());
    kernels::parallel::upsample_forward<double>(4, 4, 3, 9, 7, x.ptr(), b.ptr());
    CHECK(a == b);
}

TEST_CASE("pointwise: reference values and clip gradient") {
    auto x = VarD::parameter(Tensor<double>({3}, {0.0, 1.7, -0.2}));
    CHECK(ops::tanh(x).value()[0] == 0.0);
    CHECK(ops::sigmoid(x).value()[0] == 0.5);
    auto clipped = ops::clip_unit(x);
    CHECK(clipped.value()[1] == 1.0);
    backward(ops::sum(clipped));
    CHECK(x.grad()[1] == 0.0);
    CHECK(x.grad()[2] == 1.0);
}

TEST_CASE("stop_gradient") {
    auto x = VarD::parameter(Tensor<double>::scalar(3.0));
    auto y = ops::mul(ops::stop_gradient(x), x);
    CHECK(y.item() == 9.0);
    backward(y);
    CHECK(x.grad().item() == 3.0);

    auto x2 = VarD::parameter(Tensor<double>::scalar(3.0));
    auto once = ops::stop_gradient(x2);
    auto twice = ops::stop_gradient(ops::stop_gradient(x2));
    CHECK(once.value() == twice.value());
    CHECK(once.value() == x2.value());
    CHECK_FALSE(twice.requires_grad());
    backward(ops::add(ops::sum(twice), ops::sum(once)));
    CHECK_FALSE(x2.has_grad());
    CHECK(x2.grad().item() == 0.0);
}

TEST_CASE("spatial_gradient") {
    auto [dx, dy] = ops::spatial_gradient(VarD::constant(Tensor<double>({1, 1, 2, 2}, {0, 1, 2, 3})));
    CHECK(dx.value() == Tensor<double>({1, 1, 2, 2}, {1, 0, 1, 0}));
    CHECK(dy.value() == Tensor<double>({1, 1, 2, 2}, {2, 2, 0, 0}));

    auto [cx, cy] = ops::spatial_gradient(VarD::constant(Tensor<double>({1, 2, 3, 4}, 0.7)));
    for (double v : cx.value().vec()) CHECK(v == 0.0);
    for (double v : cy.value().vec()) CHECK(v == 0.0);

    Tensor<double> ramp({1, 1, 4, 5});
    for (int64_t y = 0; y < 4; ++y)
        for (int64_t x = 0; x < 5; ++x) ramp.at(0, 0, y, x) = 0.25 * double(x);
    auto [rx, ry] = ops::spatial_gradient(VarD::constant(ramp));
    for (double v : ry.value().vec()) CHECK(v == 0.0);

    CHECK_THROWS_AS(ops::spatial_gradient(VarD::constant(Tensor<double>({1, 1, 1, 4}))), ShapeError);
}

TEST_CASE("backward: polynomial, accumulation, scalar requirement") {
    auto x = VarD::parameter(Tensor<double>::scalar(3.0));
    backward(ops::square(x));
    CHECK(x.grad().item() == 6.0);

    auto z = VarD::parameter(Tensor<double>::scalar(1.5));
    backward(ops::add(z, z));
    CHECK(z.grad().item() == 2.0);

    auto v = VarD::parameter(Tensor<double>({2}, {1.0, 2.0}));
    CHECK_THROWS_AS(backward(ops::square(v)), ShapeError);
}

TEST_CASE("backward: conv2d kernel gradient matches finite differences") {
    std::mt19937_64 rng(31);
    auto x = oracle::random_tensor({2, 2, 5, 5}, rng);
    auto k = oracle::random_tensor({3, 2, 3, 3}, rng);
    auto report = check_gradients(
        [](const std::vector<VarD>& v) { return ops::sum(ops::conv2d(v[0], v[1], 1, 1)); }, {x, k});
    INFO(report.summary());
    CHECK(report.max_rel_error() < 1e-5);
}

TEST_CASE("tape: topological order, each node once") {
    auto a = VarD::parameter(Tensor<double>::scalar(2.0));
    auto b = ops::square(a);
    auto c = ops::mul(b, a);
    auto d = ops::add(c, b);
    const auto tape = Tape<double>::record(d);
    std::set<const Node<double>*> seen;
    for (const auto& node : tape.nodes()) {
        CHECK(seen.insert(node.get()).second);
        for (const auto& in : node->inputs) {
            if (in && in->requires_grad) CHECK(seen.count(in.get()) == 1);
        }
    }
    CHECK(tape.size() == 4);
    backward(d);
    // d = a^3 + a^2 -> 3a^2 + 2a
    CHECK(a.grad().item() == doctest::Approx(16.0));
}

TEST_CASE("gradient suite: every differentiable op against central differences") {
    for (const auto& [name, report] : suites::op_gradient_suite()) {
        INFO(name << "\n" << report.summary());
        CHECK(report.max_rel_error() < 1e-4);
    }
}

TEST_CASE("AdamW") {
    SUBCASE("zero gradient, zero decay is a fixed point") {
        AdamW<double> opt({.lr = 0.1, .weight_decay = 0.0});
        auto p = VarD::parameter(Tensor<double>({3}, {1.0, -2.0, 0.5}));
        p.node()->grad_buffer();
        ParameterList<double> params{{"p", p}};
        for (int i = 0; i < 3; ++i) opt.step(params, 0.1);
        CHECK(p.value() == Tensor<double>({3}, {1.0, -2.0, 0.5}));
    }
    SUBCASE("first step moves by about lr") {
        AdamW<double> opt({.lr = 0.1, .weight_decay = 0.0});
        auto p = VarD::parameter(Tensor<double>::scalar(0.0));
        p.node()->grad_buffer()[0] = 1.0;
        opt.step({{"p", p}}, 0.1);
        CHECK(p.item() == doctest::Approx(-0.1).epsilon(1e-6));
    }
    SUBCASE("non-finite gradient skips the tensor") {
        AdamW<double> opt;
        auto p = VarD::parameter(Tensor<double>({2}, {1.0, 1.0}));
        auto q = VarD::parameter(Tensor<double>({1}, {1.0}));
        p.node()->grad_buffer()[0] = std::nan("");
        q.node()->grad_buffer()[0] = 1.0;
        opt.step({{"p", p}, {"q", q}}, 0.01);
        CHECK(opt.skipped() == 1);
        CHECK(p.value() == Tensor<double>({2}, {1.0, 1.0}));
        CHECK(q.item() < 1.0);
    }
    SUBCASE("cosine schedule") {
        CHECK(cosine_lr(2e-4, 0, 100) == doctest::Approx(2e-4));
        CHECK(cosine_lr(2e-4, 50, 100) == doctest::Approx(1e-4).epsilon(1e-12));
        CHECK(cosine_lr(2e-4, 100, 100) == doctest::Approx(0.0));
    }
}
