#pragma once

// Check bodies shared by the unit tests and the acceptance binary.

#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dmad/core/gradcheck.hpp"
#include "dmad/core/ops.hpp"
#include "dmad/model/model.hpp"
#include "dmad/scoring/losses.hpp"
#include "oracles.hpp"

namespace suites {

using dmad::Tensor;
using VarD = dmad::Var<double>;

// Central-difference report for every differentiable op, keyed by name.
inline std::vector<std::pair<std::string, dmad::GradCheckReport>> op_gradient_suite(uint64_t seed = 77) {
    namespace ops = dmad::ops;
    std::mt19937_64 rng(seed);
    std::vector<std::pair<std::string, dmad::GradCheckReport>> out;
    auto check = [&](const char* name, auto fn, std::vector<Tensor<double>> inputs) {
        out.emplace_back(name, dmad::check_gradients(fn, inputs));
    };
    auto w4 = oracle::random_tensor({2, 3, 4, 5}, rng);
    auto wt = [&](const VarD& v) { return ops::sum(ops::mul(v, VarD::constant(w4))); };
    auto a = oracle::random_tensor({2, 3, 4, 5}, rng);
    auto b = oracle::random_tensor({2, 3, 4, 5}, rng);

    check("add", [&](const std::vector<VarD>& v) { return wt(ops::add(v[0], v[1])); }, {a, b});
    check("sub", [&](const std::vector<VarD>& v) { return wt(ops::sub(v[0], v[1])); }, {a, b});
    check("mul", [&](const std::vector<VarD>& v) { return wt(ops::mul(v[0], v[1])); }, {a, b});
    check("square", [&](const std::vector<VarD>& v) { return wt(ops::square(v[0])); }, {a});
    check("abs", [&](const std::vector<VarD>& v) { return wt(ops::abs(v[0])); }, {a});
    check("mean", [&](const std::vector<VarD>& v) { return ops::mean(ops::square(v[0])); }, {a});
    check("tanh", [&](const std::vector<VarD>& v) { return wt(ops::tanh(v[0])); }, {a});
    check("relu", [&](const std::vector<VarD>& v) { return wt(ops::relu(v[0])); }, {a});
    check("sigmoid", [&](const std::vector<VarD>& v) { return wt(ops::sigmoid(v[0])); }, {a});
    check("clip", [&](const std::vector<VarD>& v) { return wt(ops::clip_unit(ops::scale(v[0], 1.5))); }, {a});
    check("conv2d stride 2",
          [&](const std::vector<VarD>& v) { return ops::sum(ops::square(ops::conv2d(v[0], v[1], 2, 1))); },
          {oracle::random_tensor({2, 3, 6, 7}, rng), oracle::random_tensor({4, 3, 3, 3}, rng)});
    check("conv_transpose2d",
          [&](const std::vector<VarD>& v) {
              return ops::sum(ops::square(ops::conv_transpose2d(v[0], v[1], 2, 1)));
          },
          {oracle::random_tensor({2, 3, 3, 4}, rng), oracle::random_tensor({3, 2, 4, 4}, rng)});
    check("add_bias",
          [&](const std::vector<VarD>& v) { return wt(ops::add_bias(v[0], v[1])); },
          {a, oracle::random_tensor({3}, rng)});
    check("bilinear_upsample",
          [&](const std::vector<VarD>& v) { return ops::sum(ops::square(ops::bilinear_upsample(v[0], 7, 9))); },
          {oracle::random_tensor({1, 2, 3, 4}, rng)});
    check("spatial_gradient",
          [&](const std::vector<VarD>& v) {
              auto [dx, dy] = ops::spatial_gradient(v[0]);
              return ops::add(wt(ops::square(dx)), wt(dy));
          },
          {a});
    check("concat/slice",
          [&](const std::vector<VarD>& v) {
              auto cat = ops::concat_channels<double>({v[0], v[1]});
              return ops::sum(ops::square(ops::slice_channels(cat, 2, 5)));
          },
          {a, b});
    check("repeat_batch",
          [&](const std::vector<VarD>& v) { return wt(ops::repeat_batch(v[0], 2)); },
          {oracle::random_tensor({1, 3, 4, 5}, rng)});
    check("repeat_channels",
          [&](const std::vector<VarD>& v) { return wt(ops::repeat_channels(v[0], 3)); },
          {oracle::random_tensor({2, 1, 4, 5}, rng)});
    check("channel_norm",
          [&](const std::vector<VarD>& v) { return ops::sum(ops::square(ops::channel_norm(v[0]))); },
          {a});
    check("channel_norm linear",
          [&](const std::vector<VarD>& v) { return ops::sum(ops::channel_norm(v[0])); }, {a});
    check("offsets_to_grid + grid_sample",
          [&](const std::vector<VarD>& v) {
              return ops::sum(ops::square(ops::grid_sample(v[0], ops::offsets_to_grid(ops::scale(v[1], 0.2)))));
          },
          {oracle::random_tensor({2, 2, 6, 5}, rng), oracle::random_tensor({2, 2, 6, 5}, rng)});
    check("gather_items",
          [&](const std::vector<VarD>& v) {
              return ops::sum(ops::square(ops::gather_items(v[0], {0, 2, 2, 1, 0, 0}, 1, 2, 3)));
          },
          {oracle::random_tensor({3, 4}, rng)});
    return out;
}

inline dmad::model::ModelConfig tiny_config(dmad::model::Mode mode = dmad::model::Mode::PDM) {
    dmad::model::ModelConfig c;
    c.mode = mode;
    c.image_h = c.image_w = 8;
    c.encoder_widths = {4};
    c.decoder_widths = {4};
    c.depth = 4;
    c.memory_items = 2;
    c.mask_width = 2;
    c.estimator.trunk_blocks = 1;
    c.estimator.trunk_width = 3;
    c.estimator.heads = {{4, 4}};
    c.estimator.head_init_gain = 0.5;
    c.estimator.backward_heads = mode == dmad::model::Mode::PPDM;
    c.seed = 3;
    return c;
}

inline Tensor<double> random_images(int64_t n, int64_t c, int64_t h, int64_t w, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor<double> t({n, c, h, w});
    for (auto& v : t.vec()) v = u(rng);
    return t;
}

struct EndToEndCheck {
    double value_diff = 0.0;  // |surrogate - model loss|
    double grad_diff = 0.0;   // max over parameters of max |surrogate grad - model grad|
    dmad::GradCheckReport report;
};

// Finite differences cannot see through the straight-through estimator, so
// the tiny model's analytic gradient is compared with a surrogate that
// freezes the codes and the stop-gradient operands, then the surrogate is
// checked against central differences.
inline EndToEndCheck end_to_end_check(dmad::model::Mode mode) {
    using namespace dmad;
    using namespace dmad::ops;
    using model::Mode;
    const auto c = tiny_config(mode);
    model::Model<double> m(c);
    scoring::LossWeights w;
    if (mode == Mode::PPDM) w.gamma2 = 1.0;
    const auto x = VarD::constant(random_images(2, 1, 8, 8, 11));

    auto base = m.forward(x);
    const auto codes = base.quantized->codes;
    const auto ze0 = VarD::constant(base.quantized->z_e.value());
    const auto zq0 = VarD::constant(base.quantized->z_q.value());

    std::function<VarD()> surrogate = [&]() -> VarD {
        auto xin = x;
        deform::DeformationPyramid<double> pyr = m.estimator()(x);
        if (mode == Mode::PPDM) xin = deform::forward_warp(x, pyr);
        auto enc = m.encode(xin);
        const auto& zq = enc.z_e.shape();
        auto z_q = gather_items(m.bank().items(), codes, zq[0], zq[2], zq[3]);
        auto reference = m.decode(add(enc.z_e, sub(zq0, ze0)), &enc);
        auto mask = m.mask(enc);
        std::vector<VarD> recs;
        if (mode == Mode::PDM) {
            for (size_t k = 1; k <= pyr.levels(); ++k)
                recs.push_back(model::compose_fg_bg(deform::apply_deformation(reference, pyr, k), mask, m.background()));
        } else {
            recs.push_back(model::compose_fg_bg(reference, mask, m.background()));
        }
        auto rec = scoring::rec_loss(xin, recs, w.lambda_grad);
        auto com = add(mse(ze0, z_q), scale(mse(enc.z_e, zq0), w.beta));
        if (mode == Mode::PDM)
            return scoring::total_loss(rec, com, deform::deformation_loss(pyr, w.deformation), w.gamma1, w.gamma2);
        return scoring::total_loss_plus(rec, com, deform::deformation_loss_plus(pyr, w.deformation),
                                        deform::cycle_loss(x, pyr), w.gamma1, w.gamma2, w.gamma3);
    };

    EndToEndCheck result;
    const auto params = m.parameters();
    zero_grads(params);
    auto terms = scoring::compute_losses(x, base, w);
    backward(terms.total);
    std::vector<Tensor<double>> model_grads;
    for (const auto& p : params) model_grads.push_back(p.var.grad());

    zero_grads(params);
    auto s = surrogate();
    result.value_diff = std::abs(s.item() - terms.total.item());
    backward(s);
    for (size_t i = 0; i < params.size(); ++i)
        result.grad_diff = std::max(result.grad_diff, oracle::max_abs_diff(params[i].var.grad(), model_grads[i]));

    result.report = check_parameter_gradients(surrogate, params);
    return result;
}

}  // namespace suites
