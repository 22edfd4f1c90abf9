#include <cmath>
#include <random>

#include "doctest.h"
#include "dmad/core/gradcheck.hpp"
#include "dmad/deform/deformation.hpp"
#include "oracles.hpp"

using namespace dmad;
using namespace dmad::deform;
using VarD = Var<double>;

namespace {

Tensor<double> constant_field(int64_t n, int64_t h, int64_t w, double ox, double oy) {
    Tensor<double> f({n, 2, h, w});
    for (int64_t b = 0; b < n; ++b)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                f.at(b, 0, y, x) = ox;
                f.at(b, 1, y, x) = oy;
            }
    return f;
}

DeformationPyramid<double> pyramid_of(std::vector<Tensor<double>> forward, int64_t h, int64_t w,
                                      std::vector<Tensor<double>> backward = {}) {
    DeformationPyramid<double> p;
    p.image_h = h;
    p.image_w = w;
    for (auto& f : forward) {
        p.head_resolutions.push_back({f.dim(2), f.dim(3)});
        p.forward.push_back(VarD::constant(std::move(f)));
    }
    for (auto& f : backward) p.backward.push_back(VarD::constant(std::move(f)));
    return p;
}

Tensor<double> ramp(int64_t h, int64_t w) {
    Tensor<double> t({1, 1, h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) t.at(0, 0, y, x) = 0.5 * double(x) - 0.25 * double(y);
    return t;
}

void zero_weights(std::vector<Conv2d<double>>& layers) {
    for (auto& l : layers) {
        l.weight.mutable_value().fill(0.0);
        l.bias.mutable_value().fill(0.0);
    }
}

}  // namespace

TEST_CASE("positional_embed") {
    auto out = positional_embed(VarD::constant(Tensor<double>({1, 1, 2, 2}, 7.0)));
    REQUIRE(out.shape() == Shape{1, 3, 2, 2});
    CHECK(out.value() == Tensor<double>({1, 3, 2, 2}, {7, 7, 7, 7, -1, 1, -1, 1, -1, -1, 1, 1}));

    auto twice = positional_embed(positional_embed(VarD::constant(Tensor<double>({2, 3, 5, 4}))));
    CHECK(twice.shape() == Shape{2, 7, 5, 4});

    auto grid = positional_grid<double>(1, 5, 9);
    CHECK(grid.at(0, 0, 0, 0) == -1.0);
    CHECK(grid.at(0, 0, 4, 8) == 1.0);
    CHECK(grid.at(0, 1, 4, 0) == 1.0);
    CHECK(grid.at(0, 0, 2, 4) == 0.0);
    CHECK_THROWS_AS(positional_embed(VarD::constant(Tensor<double>({1, 1, 1, 4}))), ShapeError);
}

TEST_CASE("estimator: shapes, range, zero weights") {
    std::mt19937_64 rng(1);
    EstimatorOptions opts;
    OffsetEstimator<double> est(opts, rng);
    std::mt19937_64 data(2);
    auto x = VarD::constant(oracle::random_tensor({2, 1, 64, 64}, data));
    auto p = est(x);
    REQUIRE(p.levels() == 2);
    CHECK(p.forward[0].shape() == Shape{2, 2, 4, 4});
    CHECK(p.forward[1].shape() == Shape{2, 2, 16, 16});
    CHECK_FALSE(p.has_backward());

    opts.head_init_gain = 50.0;
    OffsetEstimator<double> wild(opts, rng);
    for (const auto& f : wild(x).forward)
        for (double v : f.value().vec()) {
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }

    zero_weights(est.forward_heads());
    for (const auto& f : est(x).forward)
        for (double v : f.value().vec()) CHECK(v == 0.0);

    EstimatorOptions bad;
    bad.heads = {{16, 16}, {4, 4}};
    CHECK_THROWS(OffsetEstimator<double>(bad, rng));
    bad.heads = {{5, 5}};
    CHECK_THROWS(OffsetEstimator<double>(bad, rng));
    CHECK_THROWS_AS(est(VarD::constant(Tensor<double>({1, 1, 32, 32}))), ShapeError);
}

TEST_CASE("estimator: backward heads mirror forward resolutions") {
    std::mt19937_64 rng(3);
    EstimatorOptions opts;
    opts.backward_heads = true;
    OffsetEstimator<double> est(opts, rng);
    auto p = est(VarD::constant(Tensor<double>({1, 1, 64, 64}, 0.3)));
    REQUIRE(p.backward.size() == p.forward.size());
    for (size_t k = 0; k < p.levels(); ++k) CHECK(p.backward[k].shape() == p.forward[k].shape());
    ParameterList<double> params;
    est.collect(params, "deform");
    CHECK(params.size() == 2 * (4 + 2 + 2));
}

TEST_CASE("apply_deformation: zero pyramid is the exact identity") {
    std::mt19937_64 rng(4);
    auto ref = oracle::random_tensor({2, 3, 64, 64}, rng);
    auto p = pyramid_of({Tensor<double>({2, 2, 4, 4}), Tensor<double>({2, 2, 16, 16})}, 64, 64);
    CHECK(apply_deformation(VarD::constant(ref), p, 2).value() == ref);
    CHECK(apply_deformation(VarD::constant(ref), p, 1).value() == ref);

    Var<float> ref_f = Var<float>::constant(ref.cast<float>());
    DeformationPyramid<float> pf;
    pf.image_h = pf.image_w = 64;
    pf.forward = {Var<float>::constant(Tensor<float>({2, 2, 4, 4})), Var<float>::constant(Tensor<float>({2, 2, 16, 16}))};
    CHECK(apply_deformation(ref_f, pf, 2).value() == ref_f.value());

    CHECK_THROWS_AS(apply_deformation(VarD::constant(ref), p, 0), std::out_of_range);
    CHECK_THROWS_AS(apply_deformation(VarD::constant(ref), p, 3), std::out_of_range);
}

TEST_CASE("apply_deformation: one-pixel +x shift on a 2x2 image") {
    auto p = pyramid_of({constant_field(1, 2, 2, pixels_to_normalized(1.0, 2), 0.0)}, 2, 2);
    auto out = apply_deformation(VarD::constant(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4})), p, 1);
    CHECK(out.value() == Tensor<double>({1, 1, 2, 2}, {2, 2, 4, 4}));
}

TEST_CASE("apply_deformation: shift then its negation") {
    std::mt19937_64 rng(5);
    const int64_t h = 12, w = 12;
    for (double delta : {0.1, 0.3, 0.45}) {
        const double d = pixels_to_normalized(delta, w);
        auto p = pyramid_of({constant_field(1, 4, 4, d, 0.5 * d), constant_field(1, 4, 4, -d, -0.5 * d)}, h, w);

        auto ref = oracle::random_tensor({1, 1, h, w}, rng);
        auto out = apply_deformation(VarD::constant(ref), p, 2).value();
        auto g1 = ops::offsets_to_grid(VarD::constant(constant_field(1, h, w, d, 0.5 * d))).value();
        auto g2 = ops::offsets_to_grid(VarD::constant(constant_field(1, h, w, -d, -0.5 * d))).value();
        auto direct = oracle::grid_sample(oracle::grid_sample(ref, g1), g2);
        CHECK(oracle::max_abs_diff(out, direct) < 1e-12);

        // Bilinear interpolation reproduces affine images away from the border.
        auto lin = ramp(h, w);
        auto round_trip = apply_deformation(VarD::constant(lin), p, 2).value();
        for (int64_t y = 1; y + 1 < h; ++y)
            for (int64_t x = 1; x + 1 < w; ++x)
                CHECK(round_trip.at(0, 0, y, x) == doctest::Approx(lin.at(0, 0, y, x)).epsilon(1e-12));
    }
}

TEST_CASE("deformation_loss: examples and oracle") {
    auto zero = pyramid_of({Tensor<double>({1, 2, 4, 4}), Tensor<double>({1, 2, 16, 16})}, 64, 64);
    CHECK(deformation_loss(zero).item() == 0.0);

    auto constant = pyramid_of({constant_field(1, 4, 4, 0.3, 0.4)}, 64, 64);
    auto terms = field_regularizer(constant.forward);
    CHECK(terms.smoothness.item() == 0.0);
    CHECK(terms.strength.item() == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(deformation_loss(constant).item() == doctest::Approx(0.5).epsilon(1e-14));

    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Tensor<double>> fields{oracle::random_tensor({2, 2, 4, 4}, rng),
                                           oracle::random_tensor({2, 2, 16, 16}, rng)};
        const double expected = oracle::deformation_loss(fields);
        auto p = pyramid_of(fields, 64, 64);
        const double got = deformation_loss(p).item();
        CHECK(std::abs(got - expected) < 1e-10);
        CHECK(got > 0.0);
    }

    DeformationLossWeights no_strength{1.0, 0.0};
    CHECK(deformation_loss(constant, no_strength).item() == 0.0);
}

TEST_CASE("deformation_loss_plus") {
    auto zeros = pyramid_of({Tensor<double>({1, 2, 4, 4})}, 8, 8, {Tensor<double>({1, 2, 4, 4})});
    CHECK(deformation_loss_plus(zeros).item() == 0.0);

    auto backward_only = pyramid_of({Tensor<double>({1, 2, 4, 4})}, 8, 8, {constant_field(1, 4, 4, 0.3, 0.4)});
    CHECK(deformation_loss_plus(backward_only).item() == doctest::Approx(0.5).epsilon(1e-14));

    std::mt19937_64 rng(7);
    auto f = oracle::random_tensor({1, 2, 4, 4}, rng);
    auto b = oracle::random_tensor({1, 2, 4, 4}, rng);
    auto both = pyramid_of({f}, 8, 8, {b});
    const double split = deformation_loss(pyramid_of({f}, 8, 8)).item() + deformation_loss(pyramid_of({b}, 8, 8)).item();
    CHECK(deformation_loss_plus(both).item() == doctest::Approx(split).epsilon(1e-14));

    CHECK_THROWS(deformation_loss_plus(pyramid_of({f}, 8, 8)));
}

TEST_CASE("cycle_loss") {
    std::mt19937_64 rng(8);
    auto x = VarD::constant(oracle::random_tensor({1, 1, 8, 8}, rng));
    auto zeros = pyramid_of({Tensor<double>({1, 2, 4, 4})}, 8, 8, {Tensor<double>({1, 2, 4, 4})});
    CHECK(cycle_loss(x, zeros).item() == 0.0);

    auto random = pyramid_of({oracle::random_tensor({1, 2, 4, 4}, rng)}, 8, 8, {oracle::random_tensor({1, 2, 4, 4}, rng)});
    CHECK(cycle_loss(VarD::constant(Tensor<double>({1, 1, 8, 8}, 0.37)), random).item() == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(std::isfinite(cycle_loss(x, random).item()));

    const int64_t w = 8;
    const double px = pixels_to_normalized(1.0, w);
    auto shift = pyramid_of({constant_field(1, 4, 4, px, 0.0)}, 8, w, {constant_field(1, 4, 4, -px, 0.0)});
    auto lin = VarD::constant(ramp(8, w));
    auto round = backward_warp(forward_warp(lin, shift), shift).value();
    double boundary = 0.0;
    for (int64_t y = 0; y < 8; ++y)
        for (int64_t c = 0; c < w; ++c) {
            const double r = std::abs(round.at(0, 0, y, c) - lin.value().at(0, 0, y, c));
            if (c >= 1 && c + 1 < w) {
                CHECK(r < 1e-12);
            } else {
                boundary = std::max(boundary, r);
            }
        }
    CHECK(boundary > 0.0);
    CHECK(boundary <= 0.5 + 1e-12);
    CHECK(cycle_loss(lin, shift).item() > 0.0);

    CHECK_THROWS(cycle_loss(x, pyramid_of({Tensor<double>({1, 2, 4, 4})}, 8, 8)));
}

TEST_CASE("deformation and cycle losses: gradients w.r.t. raw fields") {
    std::mt19937_64 rng(9);
    auto x = oracle::random_tensor({1, 1, 8, 8}, rng);
    auto f1 = oracle::random_tensor({1, 2, 2, 2}, rng, -0.3, 0.3);
    auto f2 = oracle::random_tensor({1, 2, 4, 4}, rng, -0.3, 0.3);
    auto b1 = oracle::random_tensor({1, 2, 2, 2}, rng, -0.3, 0.3);
    auto b2 = oracle::random_tensor({1, 2, 4, 4}, rng, -0.3, 0.3);
    auto build = [](const std::vector<VarD>& v) {
        DeformationPyramid<double> p;
        p.image_h = p.image_w = 8;
        p.forward = {v[0], v[1]};
        p.backward = {v[2], v[3]};
        return p;
    };
    auto df = check_gradients([&](const std::vector<VarD>& v) { return deformation_loss_plus(build(v)); }, {f1, f2, b1, b2});
    INFO(df.summary());
    CHECK(df.max_rel_error() < 1e-4);
    auto cyc = check_gradients(
        [&](const std::vector<VarD>& v) { return cycle_loss(VarD::constant(x), build(v)); }, {f1, f2, b1, b2});
    INFO(cyc.summary());
    CHECK(cyc.max_rel_error() < 1e-4);
}

TEST_CASE("pre-deformation: zero weights leave the input unchanged; gradient reaches forward heads") {
    std::mt19937_64 rng(10);
    EstimatorOptions opts;
    opts.image_h = opts.image_w = 8;
    opts.trunk_blocks = 1;
    opts.trunk_width = 3;
    opts.heads = {{4, 4}};
    opts.backward_heads = true;
    opts.head_init_gain = 1.0;
    OffsetEstimator<double> est(opts, rng);

    std::mt19937_64 data(11);
    auto x = VarD::constant(oracle::random_tensor({1, 1, 8, 8}, data));
    auto target = VarD::constant(oracle::random_tensor({1, 1, 8, 8}, data));

    ParameterList<double> heads;
    est.forward_heads()[0].collect(heads, "head");
    auto loss_fn = [&]() { return ops::mse(forward_warp(x, est(x)), target); };
    auto report = check_parameter_gradients(loss_fn, heads);
    INFO(report.summary());
    CHECK(report.max_rel_error() < 1e-4);
    CHECK(report.entries[0].analytic_norm > 0.0);

    zero_weights(est.forward_heads());
    CHECK(forward_warp(x, est(x)).value() == x.value());
}
