#pragma once

// Inference-time error maps and scores. Maps are plain [N,1,H,W] tensors in
// double precision; nothing here records a graph.

#include <cstdint>
#include <string>

#include "dmad/model/model.hpp"

namespace dmad::scoring {

struct AnomalyMaps {
    Tensor<double> a_rec;  // [N,1,H,W]
    Tensor<double> a_df;   // [N,1,H,W]
    // Error map before the backward pullback (ppdm); equals a_rec in pdm mode.
    Tensor<double> a_rec_unaligned;
};

// Σ_c (a - b)^2 per pixel: [N,C,H,W] x2 -> [N,1,H,W].
template <typename T>
Tensor<double> squared_error_map(const Tensor<T>& a, const Tensor<T>& b);

// Σ over fields of the per-pixel vector magnitude, fields upsampled to HxW.
template <typename T>
Tensor<double> magnitude_map(const std::vector<Var<T>>& fields, int64_t h, int64_t w);

// pdm: a_rec = Dis_map(x, x̂_K), a_df = Σ_k |Up O_k|.
// ppdm: a_rec = Dis_map(x_fwd, x̂) ∘ O_K^T ∘ … ∘ O_1^T,
//       a_df = Σ_k |O_k ∘ O_{k+1} ∘ … ∘ O_K| + Σ_k |O_k^T ∘ O_{k-1}^T ∘ … ∘ O_1^T|.
// `expected` rejects outputs from the other pipeline.
template <typename T>
AnomalyMaps anomaly_maps(const Var<T>& x, const model::ForwardOutputs<T>& out, model::Mode expected);

struct SmoothingKernel {
    enum class Kind { Box, Gaussian } kind = Kind::Box;
    int64_t box_size = 16;
    double sigma = 4.0;

    static SmoothingKernel box(int64_t size) { return {Kind::Box, size, 4.0}; }
    static SmoothingKernel gaussian(double sigma) { return {Kind::Gaussian, 16, sigma}; }
    std::string describe() const;
};

SmoothingKernel parse_kernel(const std::string& spec);

// Separable normalized convolution with replicated borders, per plane.
Tensor<double> smooth(const Tensor<double>& maps, const SmoothingKernel& kernel);

struct ImageScore {
    double score = 0.0;
    double rec_peak = 0.0;  // max of smoothed a_rec
    double df_peak = 0.0;   // max of smoothed a_df
};

// Per sample: max(a_rec ⊗ k) + α max(a_df ⊗ k).
std::vector<ImageScore> image_scores(const AnomalyMaps& maps, double alpha, const SmoothingKernel& kernel);

// a_rec + α a_df elementwise.
Tensor<double> pixel_score(const AnomalyMaps& maps, double alpha);

}  // namespace dmad::scoring
