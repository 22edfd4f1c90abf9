#include <numeric>
#include <random>

#include "doctest.h"
#include "dmad/compression/memory.hpp"
#include "dmad/core/gradcheck.hpp"
#include "dmad/core/ops.hpp"
#include "oracles.hpp"

using namespace dmad;
using namespace dmad::compression;
using VarD = Var<double>;

namespace {

MemoryBank<double> two_item_bank() { return MemoryBank<double>(Tensor<double>({2, 2}, {0, 0, 1, 1})); }

// One query location per call: [1, 2, 1, 1].
VarD query(double a, double b) { return VarD::constant(Tensor<double>({1, 2, 1, 1}, {a, b})); }

}  // namespace

TEST_CASE("quantize: nearest item, exact match, tie to lowest index") {
    auto bank = two_item_bank();
    CHECK(quantize(query(0.2, 0.1), bank).codes == std::vector<int64_t>{0});

    auto exact = quantize(query(1.0, 1.0), bank);
    CHECK(exact.codes == std::vector<int64_t>{1});
    CHECK(exact.z_q.value() == Tensor<double>({1, 2, 1, 1}, {1, 1}));

    CHECK(quantize(query(0.5, 0.5), bank).codes == std::vector<int64_t>{0});
}

TEST_CASE("quantize: rejects depth mismatch") {
    auto bank = two_item_bank();
    CHECK_THROWS_AS(quantize(VarD::constant(Tensor<double>({1, 3, 1, 1})), bank), ShapeError);
    CHECK_THROWS(MemoryBank<double>(0, 2, 1));
    CHECK_THROWS(MemoryBank<double>(Tensor<double>({1, 2}, {0.0, std::nan("")})));
}

TEST_CASE("quantize: z_q columns are bank items, idempotent, usage counted once per location") {
    MemoryBank<double> bank(7, 5, 3);
    std::mt19937_64 rng(4);
    auto z_e = VarD::constant(oracle::random_tensor({3, 5, 4, 6}, rng, -0.3, 0.3));
    auto q = quantize(z_e, bank);
    const auto& items = bank.items().value();
    const auto& zq = q.z_q.value();
    for (int64_t b = 0; b < 3; ++b)
        for (int64_t y = 0; y < 4; ++y)
            for (int64_t x = 0; x < 6; ++x) {
                const int64_t code = q.codes[static_cast<size_t>((b * 4 + y) * 6 + x)];
                REQUIRE(code >= 0);
                REQUIRE(code < 7);
                for (int64_t d = 0; d < 5; ++d) CHECK(zq.at(b, d, y, x) == items[code * 5 + d]);
            }
    const auto& usage = bank.usage_counts();
    CHECK(std::accumulate(usage.begin(), usage.end(), int64_t{0}) == 3 * 4 * 6);

    auto again = quantize(VarD::constant(zq), bank, false);
    CHECK(again.codes == q.codes);
    CHECK(again.z_q.value() == zq);
    CHECK(std::accumulate(usage.begin(), usage.end(), int64_t{0}) == 3 * 4 * 6);

    CHECK(q.straight_through.value() == zq);
}

TEST_CASE("straight-through: decoder gradient reaches z_e unchanged") {
    MemoryBank<double> bank(3, 2, 9);
    auto z_e = VarD::parameter(Tensor<double>({1, 2, 2, 2}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, 0.8}));
    auto q = quantize(z_e, bank, false);
    auto w = VarD::constant(Tensor<double>({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}));
    backward(ops::sum(ops::mul(q.straight_through, w)));
    CHECK(z_e.grad() == w.value());
}

TEST_CASE("compression_loss: examples and gradient routing") {
    auto one = VarD::parameter(Tensor<double>({1, 1, 1, 1}, {1.0}));
    auto zero = VarD::parameter(Tensor<double>({1, 1, 1, 1}, {0.0}));
    CHECK(compression_loss(one, zero, 0.25).item() == doctest::Approx(1.25).epsilon(1e-15));
    CHECK(compression_loss(one, VarD::constant(one.value()), 0.25).item() == 0.0);

    backward(compression_loss(one, zero, 0.25));
    // Codebook term reaches only the item side, commitment term only the query side.
    CHECK(one.grad()[0] == doctest::Approx(0.25 * 2.0));
    CHECK(zero.grad()[0] == doctest::Approx(-2.0));

    std::mt19937_64 rng(5);
    auto ze = oracle::random_tensor({2, 3, 3, 3}, rng);
    auto zq = oracle::random_tensor({2, 3, 3, 3}, rng);
    CHECK(compression_loss(VarD::constant(ze), VarD::constant(zq), 0.25).item() > 0.0);

    // Bank frozen: the analytic z_e gradient is the central difference of the
    // beta-weighted commitment term alone.
    auto z = VarD::parameter(ze);
    backward(compression_loss(z, VarD::constant(zq), 0.25));
    const auto analytic = z.grad();
    std::vector<double> numeric(ze.size());
    const double h = 1e-6;
    for (size_t i = 0; i < ze.size(); ++i) {
        auto plus = ze, minus = ze;
        plus[i] += h;
        minus[i] -= h;
        const auto commit = [&](const Tensor<double>& t) {
            return 0.25 * ops::mse(VarD::constant(t), VarD::constant(zq)).item();
        };
        numeric[i] = (commit(plus) - commit(minus)) / (2 * h);
    }
    CHECK(relative_error(analytic.vec(), numeric) < 1e-4);
}

TEST_CASE("compressed skip: channel count, rejection, no gradient into the encoder") {
    CHECK(skip_channels(64, 16) == 4);
    CHECK(skip_channels(8, 16) == 1);
    CHECK_THROWS_AS(skip_channels(64, 8), std::invalid_argument);

    std::mt19937_64 rng(6);
    auto features = VarD::parameter(oracle::random_tensor({1, 64, 3, 3}, rng));
    auto kernel = VarD::parameter(oracle::random_tensor({4, 64, 1, 1}, rng));
    auto bias = VarD::parameter(Tensor<double>({4}));
    auto out = compressed_skip(features, kernel, bias);
    CHECK(out.shape() == Shape{1, 4, 3, 3});
    backward(ops::sum(ops::square(out)));
    const auto feature_grad = features.grad();
    for (double g : feature_grad.vec()) CHECK(g == 0.0);
    double kernel_grad = 0.0;
    const auto kernel_grads = kernel.grad();
    for (double g : kernel_grads.vec()) kernel_grad += std::abs(g);
    CHECK(kernel_grad > 0.0);
}

TEST_CASE("reseed_dead_items") {
    std::mt19937_64 rng(8);
    SUBCASE("all items used leaves the bank unchanged") {
        auto bank = two_item_bank();
        bank.record_usage({0, 1});
        const auto before = bank.items().value();
        CHECK(reseed_dead_items(bank, Tensor<double>({1, 2}, {9, 9}), 1, rng) == 0);
        CHECK(bank.items().value() == before);
        CHECK(bank.usage_counts() == std::vector<int64_t>{0, 0});
    }
    SUBCASE("a dead item takes the single recent query") {
        auto bank = two_item_bank();
        bank.record_usage({0, 0});
        CHECK(reseed_dead_items(bank, Tensor<double>({1, 2}, {7, -3}), 1, rng) == 1);
        CHECK(bank.items().value() == Tensor<double>({2, 2}, {0, 0, 7, -3}));
    }
    SUBCASE("staleness accumulates across epochs") {
        auto bank = two_item_bank();
        const Tensor<double> q({1, 2}, {5, 5});
        for (int epoch = 0; epoch < 2; ++epoch) {
            bank.record_usage({0});
            CHECK(reseed_dead_items(bank, q, 3, rng) == 0);
        }
        CHECK(bank.idle_epochs() == std::vector<int64_t>{0, 2});
        bank.record_usage({0});
        CHECK(reseed_dead_items(bank, q, 3, rng) == 1);
        CHECK(bank.idle_epochs() == std::vector<int64_t>{0, 0});
    }
    SUBCASE("a single-item bank is never reseeded") {
        MemoryBank<double> bank(Tensor<double>({1, 2}, {1, 2}));
        for (int epoch = 0; epoch < 5; ++epoch) CHECK(reseed_dead_items(bank, Tensor<double>({1, 2}, {3, 4}), 1, rng) == 0);
        CHECK(bank.items().value() == Tensor<double>({1, 2}, {1, 2}));
    }
}

TEST_CASE("query_rows reorders locations to rows") {
    const Tensor<double> z({1, 2, 1, 2}, {1, 2, 3, 4});
    CHECK(query_rows(z) == Tensor<double>({2, 2}, {1, 3, 2, 4}));
}
