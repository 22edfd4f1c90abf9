#include "dmad/compression/memory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "dmad/core/ops.hpp"

namespace dmad::compression {

template <typename T>
MemoryBank<T>::MemoryBank(int64_t items, int64_t depth, uint64_t seed, double init_std) {
    if (items < 1 || depth < 1) throw std::invalid_argument("memory bank needs at least one item of depth >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, init_std);
    Tensor<T> table({items, depth});
    for (auto& v : table.vec()) v = static_cast<T>(dist(rng));
    items_ = Var<T>::parameter(std::move(table));
    usage_.assign(static_cast<size_t>(items), 0);
    idle_.assign(static_cast<size_t>(items), 0);
}

template <typename T>
MemoryBank<T>::MemoryBank(Tensor<T> items) {
    require_rank(items.shape(), 2, "memory bank");
    if (items.dim(0) < 1 || items.dim(1) < 1) throw std::invalid_argument("memory bank must be nonempty");
    for (T v : items.vec()) {
        if (!std::isfinite(v)) throw std::invalid_argument("memory bank items must be finite");
    }
    const auto n = static_cast<size_t>(items.dim(0));
    items_ = Var<T>::parameter(std::move(items));
    usage_.assign(n, 0);
    idle_.assign(n, 0);
}

template <typename T>
void MemoryBank<T>::record_usage(const std::vector<int64_t>& codes) {
    for (int64_t c : codes) ++usage_[static_cast<size_t>(c)];
}

template <typename T>
void MemoryBank<T>::reset_usage() {
    std::fill(usage_.begin(), usage_.end(), 0);
}

template <typename T>
void MemoryBank<T>::set_bookkeeping(std::vector<int64_t> usage, std::vector<int64_t> idle) {
    if (usage.size() != usage_.size() || idle.size() != idle_.size()) {
        throw std::invalid_argument("memory bank bookkeeping size mismatch");
    }
    usage_ = std::move(usage);
    idle_ = std::move(idle);
}

template <typename T>
std::vector<int64_t> nearest_items(const Tensor<T>& z_e, const Tensor<T>& items) {
    require_rank(z_e.shape(), 4, "quantize query");
    const int64_t n = z_e.dim(0), depth = z_e.dim(1), plane = z_e.dim(2) * z_e.dim(3);
    const int64_t count = items.dim(0);
    if (count < 1) throw std::invalid_argument("quantize: empty memory bank");
    if (items.dim(1) != depth) {
        throw ShapeError("quantize: feature depth " + std::to_string(depth) + " does not match bank depth " +
                         std::to_string(items.dim(1)));
    }
    std::vector<int64_t> codes(static_cast<size_t>(n * plane));
    std::vector<T> query(static_cast<size_t>(depth));
    for (int64_t b = 0; b < n; ++b)
        for (int64_t i = 0; i < plane; ++i) {
            for (int64_t d = 0; d < depth; ++d) query[d] = z_e[(b * depth + d) * plane + i];
            int64_t best = 0;
            T best_dist = std::numeric_limits<T>::infinity();
            for (int64_t k = 0; k < count; ++k) {
                const T* item = items.ptr() + k * depth;
                T dist{0};
                for (int64_t d = 0; d < depth; ++d) {
                    const T diff = query[d] - item[d];
                    dist += diff * diff;
                }
                if (dist < best_dist) {
                    best_dist = dist;
                    best = k;
                }
            }
            codes[static_cast<size_t>(b * plane + i)] = best;
        }
    return codes;
}

template <typename T>
Var<T> straight_through(const Var<T>& query, const Var<T>& quantized) {
    if (query.shape() != quantized.shape()) throw ShapeError("straight_through: shape mismatch");
    return make_result<T>(quantized.value(), {query}, "straight_through",
                          [](Node<T>& self) { self.inputs[0]->accumulate(self.grad); });
}

template <typename T>
QuantizedEmbedding<T> quantize(const Var<T>& z_e, MemoryBank<T>& bank, bool track_usage) {
    QuantizedEmbedding<T> q;
    q.codes = nearest_items(z_e.value(), bank.items().value());
    q.batch = z_e.dim(0);
    q.height = z_e.dim(2);
    q.width = z_e.dim(3);
    q.z_e = z_e;
    q.z_q = ops::gather_items(bank.items(), q.codes, q.batch, q.height, q.width);
    q.straight_through = straight_through(z_e, q.z_q);
    if (track_usage) bank.record_usage(q.codes);
    return q;
}

template <typename T>
Var<T> compression_loss(const Var<T>& z_e, const Var<T>& z_q, T beta) {
    if (z_e.shape() != z_q.shape()) throw ShapeError("compression_loss: shape mismatch");
    auto codebook = ops::mse(ops::stop_gradient(z_e), z_q);
    auto commitment = ops::mse(z_e, ops::stop_gradient(z_q));
    return ops::add(codebook, ops::scale(commitment, beta));
}

int64_t skip_channels(int64_t channels, int64_t reduction) {
    if (reduction < 16) {
        throw std::invalid_argument("compressed skip: reduction factor must be at least 16, got " +
                                    std::to_string(reduction));
    }
    return std::max<int64_t>(1, channels / reduction);
}

template <typename T>
Var<T> compressed_skip(const Var<T>& features, const Var<T>& kernel, const Var<T>& bias) {
    return ops::add_bias(ops::conv2d(ops::stop_gradient(features), kernel, 1, 0), bias);
}

template <typename T>
Tensor<T> query_rows(const Tensor<T>& z_e) {
    require_rank(z_e.shape(), 4, "query_rows");
    const int64_t n = z_e.dim(0), depth = z_e.dim(1), plane = z_e.dim(2) * z_e.dim(3);
    Tensor<T> rows({n * plane, depth});
    for (int64_t b = 0; b < n; ++b)
        for (int64_t i = 0; i < plane; ++i)
            for (int64_t d = 0; d < depth; ++d) rows[(b * plane + i) * depth + d] = z_e[(b * depth + d) * plane + i];
    return rows;
}

template <typename T>
int64_t reseed_dead_items(MemoryBank<T>& bank, const Tensor<T>& recent_queries, int64_t staleness_threshold,
                          std::mt19937_64& rng) {
    require_rank(recent_queries.shape(), 2, "reseed queries");
    if (recent_queries.dim(0) < 1) throw std::invalid_argument("reseed_dead_items: no recent queries");
    if (recent_queries.dim(1) != bank.depth()) throw ShapeError("reseed_dead_items: query depth mismatch");
    std::vector<int64_t> usage = bank.usage_counts();
    std::vector<int64_t> idle = bank.idle_epochs();
    int64_t reseeded = 0;
    Tensor<T>& table = bank.items().mutable_value();
    std::uniform_int_distribution<int64_t> pick(0, recent_queries.dim(0) - 1);
    for (size_t k = 0; k < usage.size(); ++k) {
        idle[k] = usage[k] == 0 ? idle[k] + 1 : 0;
        if (bank.size() > 1 && idle[k] >= staleness_threshold) {
            const int64_t row = pick(rng);
            std::copy_n(recent_queries.ptr() + row * bank.depth(), bank.depth(),
                        table.ptr() + static_cast<int64_t>(k) * bank.depth());
            idle[k] = 0;
            ++reseeded;
        }
    }
    std::fill(usage.begin(), usage.end(), 0);
    bank.set_bookkeeping(std::move(usage), std::move(idle));
    return reseeded;
}

#define DMAD_INSTANTIATE_COMPRESSION(T)                                                              \
    template class MemoryBank<T>;                                                                    \
    template std::vector<int64_t> nearest_items<T>(const Tensor<T>&, const Tensor<T>&);              \
    template QuantizedEmbedding<T> quantize<T>(const Var<T>&, MemoryBank<T>&, bool);                 \
    template Var<T> straight_through<T>(const Var<T>&, const Var<T>&);                               \
    template Var<T> compression_loss<T>(const Var<T>&, const Var<T>&, T);                            \
    template Var<T> compressed_skip<T>(const Var<T>&, const Var<T>&, const Var<T>&);                 \
    template Tensor<T> query_rows<T>(const Tensor<T>&);                                              \
    template int64_t reseed_dead_items<T>(MemoryBank<T>&, const Tensor<T>&, int64_t, std::mt19937_64&);

DMAD_INSTANTIATE_COMPRESSION(float)
DMAD_INSTANTIATE_COMPRESSION(double)

}  // namespace dmad::compression
