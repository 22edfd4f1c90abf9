#pragma once

// Information compression: every spatial query column of the encoder output is
// replaced by its single nearest memory item.

#include <cstdint>
#include <random>
#include <vector>

#include "dmad/core/autograd.hpp"

namespace dmad::compression {

// Prototype table stored item-major: items() is [N, D], row n is item n.
template <typename T>
class MemoryBank {
public:
    // i.i.d. N(0, init_std^2) items.
    MemoryBank(int64_t items, int64_t depth, uint64_t seed, double init_std = 0.1);
    explicit MemoryBank(Tensor<T> items);

    int64_t size() const { return items_.dim(0); }
    int64_t depth() const { return items_.dim(1); }

    const Var<T>& items() const { return items_; }
    Var<T>& items() { return items_; }

    const std::vector<int64_t>& usage_counts() const { return usage_; }
    const std::vector<int64_t>& idle_epochs() const { return idle_; }
    void record_usage(const std::vector<int64_t>& codes);
    void reset_usage();

    // Restores usage bookkeeping (checkpoint load).
    void set_bookkeeping(std::vector<int64_t> usage, std::vector<int64_t> idle);

private:
    Var<T> items_;
    std::vector<int64_t> usage_;
    std::vector<int64_t> idle_;
};

template <typename T>
struct QuantizedEmbedding {
    int64_t batch = 0, height = 0, width = 0;
    // One item index per location, [batch][height][width] order.
    std::vector<int64_t> codes;
    Var<T> z_e;
    // Gathered memory items; gradients flow into the bank.
    Var<T> z_q;
    // Decoder input: value of z_q, gradient copied straight to z_e.
    Var<T> straight_through;
};

// Nearest item per location of z_e [N,D,H,W] by squared L2 distance; ties go
// to the lowest index.
template <typename T>
std::vector<int64_t> nearest_items(const Tensor<T>& z_e, const Tensor<T>& items);

// Quantizes and, when `track_usage`, increments the bank's usage counts once
// per location.
template <typename T>
QuantizedEmbedding<T> quantize(const Var<T>& z_e, MemoryBank<T>& bank, bool track_usage = true);

// Forward value of `quantized`, identity gradient into `query`.
template <typename T>
Var<T> straight_through(const Var<T>& query, const Var<T>& quantized);

// mean (SG(z_e) - z_q)^2 + beta * mean (z_e - SG(z_q))^2
template <typename T>
Var<T> compression_loss(const Var<T>& z_e, const Var<T>& z_q, T beta);

// Channel count of the low-capacity skip; rejects reduction < 16.
int64_t skip_channels(int64_t channels, int64_t reduction);

// 1x1 channel-reducing convolution over stop_gradient(features).
template <typename T>
Var<T> compressed_skip(const Var<T>& features, const Var<T>& kernel, const Var<T>& bias);

// Epoch-boundary maintenance. Items unused for `staleness_threshold`
// consecutive epochs (including the one just closed) are overwritten with a
// random row of `recent_queries` [M, D]. Usage counts are then cleared.
// Returns the number of reseeded items. A single-item bank is never reseeded.
template <typename T>
int64_t reseed_dead_items(MemoryBank<T>& bank, const Tensor<T>& recent_queries, int64_t staleness_threshold,
                          std::mt19937_64& rng);

// Rows [N*H*W, D] of a feature cube [N,D,H,W].
template <typename T>
Tensor<T> query_rows(const Tensor<T>& z_e);

}  // namespace dmad::compression
