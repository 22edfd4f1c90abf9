#pragma once

// Pyramid deformation: K coarse-to-fine offset heads over a positional
// embedding of the input, applied cumulatively by bilinear grid sampling.
//
// Offsets are 2-channel fields (x, y) in align-corners normalized units, so a
// displacement of one pixel along the width is 2 / (W - 1).

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "dmad/core/layers.hpp"

namespace dmad::deform {

struct Resolution {
    int64_t h = 0, w = 0;
    bool operator==(const Resolution&) const = default;
};

template <typename T>
struct DeformationPyramid {
    // O_1..O_K at head resolution, coarse first.
    std::vector<Var<T>> forward;
    // O_1^T..O_K^T; empty outside the pre-deformation variant.
    std::vector<Var<T>> backward;
    std::vector<Resolution> head_resolutions;
    int64_t image_h = 0, image_w = 0;

    size_t levels() const { return forward.size(); }
    bool has_backward() const { return !backward.empty(); }
};

// Appends normalized x and y coordinate channels: [N,C,H,W] -> [N,C+2,H,W].
// Corner values are exactly -1 and +1.
template <typename T>
Var<T> positional_embed(const Var<T>& input);

// Coordinate channels alone, [N,2,H,W].
template <typename T>
Tensor<T> positional_grid(int64_t n, int64_t h, int64_t w);

struct EstimatorOptions {
    int64_t in_channels = 1;
    int64_t image_h = 64, image_w = 64;
    int64_t trunk_blocks = 4;
    int64_t trunk_width = 16;
    std::vector<Resolution> heads{{4, 4}, {16, 16}};
    bool backward_heads = false;
    // Multiplies the He bound of the head convolutions.
    double head_init_gain = 0.1;
};

// Shared stride-2 trunk over PE(x) with one 3x3 convolution per head, each
// followed by tanh and a clip to [-1, 1]. A head reads the trunk level whose
// resolution equals its own.
template <typename T>
class OffsetEstimator {
public:
    OffsetEstimator() = default;
    OffsetEstimator(const EstimatorOptions& options, std::mt19937_64& rng);

    DeformationPyramid<T> operator()(const Var<T>& x) const;

    const EstimatorOptions& options() const { return options_; }
    void collect(ParameterList<T>& out, const std::string& prefix) const;

    std::vector<Conv2d<T>>& trunk() { return trunk_; }
    std::vector<Conv2d<T>>& forward_heads() { return forward_heads_; }
    std::vector<Conv2d<T>>& backward_heads() { return backward_heads_; }

private:
    EstimatorOptions options_;
    std::vector<Conv2d<T>> trunk_;
    std::vector<int64_t> head_level_;
    std::vector<Conv2d<T>> forward_heads_;
    std::vector<Conv2d<T>> backward_heads_;
};

// Offsets enlarged to image resolution.
template <typename T>
Var<T> upsample_field(const Var<T>& field, int64_t image_h, int64_t image_w);

// image ∘ f_1 ∘ f_2 ∘ ...: resample by each (already full-resolution) field
// in turn, f_1 first.
template <typename T>
Var<T> warp_sequence(const Var<T>& image, const std::vector<Var<T>>& full_res_fields);

// x̃_upto = reference ∘ O_1 ∘ ... ∘ O_upto with upsampled forward fields.
template <typename T>
Var<T> apply_deformation(const Var<T>& reference, const DeformationPyramid<T>& pyramid, size_t upto);

struct DeformationLossWeights {
    double smoothness = 1.0;
    double strength = 1.0;
};

template <typename T>
struct DeformationLossTerms {
    Var<T> smoothness;
    Var<T> strength;
    Var<T> total;
};

// Σ_k [ mean_pos |∇O_k|_1 + mean_pos ||O_k||_2 ] over the given fields; the
// L1 norm of the forward-difference Jacobian and the vector magnitude are
// taken per location, then averaged over batch and positions.
template <typename T>
DeformationLossTerms<T> field_regularizer(const std::vector<Var<T>>& fields,
                                          const DeformationLossWeights& weights = {});

template <typename T>
Var<T> deformation_loss(const DeformationPyramid<T>& pyramid, const DeformationLossWeights& weights = {});

// Forward plus backward fields; rejects a pyramid without backward fields.
template <typename T>
Var<T> deformation_loss_plus(const DeformationPyramid<T>& pyramid, const DeformationLossWeights& weights = {});

// mean (x - x ∘ O_1..O_K ∘ O_K^T..O_1^T)^2
template <typename T>
Var<T> cycle_loss(const Var<T>& x, const DeformationPyramid<T>& pyramid);

// x ∘ O_1 ∘ ... ∘ O_K (input-side deformation).
template <typename T>
Var<T> forward_warp(const Var<T>& x, const DeformationPyramid<T>& pyramid);

// image ∘ O_K^T ∘ ... ∘ O_1^T
template <typename T>
Var<T> backward_warp(const Var<T>& image, const DeformationPyramid<T>& pyramid);

// Displacement of `pixels` pixels expressed in normalized units along an axis
// of the given extent.
inline double pixels_to_normalized(double pixels, int64_t extent) {
    return extent > 1 ? pixels * 2.0 / static_cast<double>(extent - 1) : 0.0;
}

}  // namespace dmad::deform
