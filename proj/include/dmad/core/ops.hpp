#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dmad/core/autograd.hpp"

namespace dmad::ops {

enum class Pointwise { Tanh, Relu, Sigmoid, ClipUnit };

// Elementwise arithmetic on identically shaped operands.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> add_scalar(const Var<T>& a, T offset);
template <typename T> Var<T> square(const Var<T>& a);
// Subgradient 0 at the origin.
template <typename T> Var<T> abs(const Var<T>& a);

template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);

// tanh, relu, sigmoid or clip to [-1, 1]. Clip passes the gradient through on
// the closed interval and blocks it outside.
template <typename T> Var<T> pointwise(const Var<T>& a, Pointwise kind);

// Forward identity, backward zero.
template <typename T> Var<T> stop_gradient(const Var<T>& a);

// Cross-correlation. input [N,C,H,W], kernel [F,C,kh,kw].
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, int64_t stride, int64_t padding);
// Adjoint of conv2d. input [N,Cin,h,w], kernel [Cin,Cout,kh,kw]; output
// extent (h-1)*stride - 2*padding + kh.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& input, const Var<T>& kernel, int64_t stride, int64_t padding);
// bias [C] added to every location of channel C.
template <typename T> Var<T> add_bias(const Var<T>& input, const Var<T>& bias);

// Bilinear sampling of input [N,C,H,W] at grid [N,Ho,Wo,2] (x, y) in
// align-corners normalized coordinates, border clamped. Differentiable in
// both arguments.
template <typename T> Var<T> grid_sample(const Var<T>& input, const Var<T>& grid);

// Align-corners bilinear enlargement to (out_h, out_w).
template <typename T> Var<T> bilinear_upsample(const Var<T>& input, int64_t out_h, int64_t out_w);

// Forward differences along width (first) and height (second); the trailing
// column / row is 0.
template <typename T> std::pair<Var<T>, Var<T>> spatial_gradient(const Var<T>& field);

template <typename T> Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_channels(const Var<T>& input, int64_t begin, int64_t end);
// [1,...] -> [n,...]
template <typename T> Var<T> repeat_batch(const Var<T>& input, int64_t n);
// [N,1,H,W] -> [N,c,H,W]
template <typename T> Var<T> repeat_channels(const Var<T>& input, int64_t c);
template <typename T> Var<T> reshape(const Var<T>& input, Shape shape);

// Per-location Euclidean norm over channels: [N,C,H,W] -> [N,1,H,W]. The
// gradient at a zero vector is taken as zero.
template <typename T> Var<T> channel_norm(const Var<T>& input);

// Offsets [N,2,H,W] (x, y) -> sampling grid [N,H,W,2] = identity + offsets.
template <typename T> Var<T> offsets_to_grid(const Var<T>& offsets);

// Rows of table [items, D] selected per location: codes has N*H*W entries in
// NCHW-spatial order; result [N,D,H,W]. Gradients scatter-add into the table.
template <typename T>
Var<T> gather_items(const Var<T>& table, const std::vector<int64_t>& codes, int64_t n, int64_t h,
                    int64_t w);

// Identity sampling grid [N,H,W,2] (no graph).
template <typename T> Tensor<T> identity_grid(int64_t n, int64_t h, int64_t w);

// Convenience wrappers.
template <typename T> Var<T> tanh(const Var<T>& a) { return pointwise(a, Pointwise::Tanh); }
template <typename T> Var<T> relu(const Var<T>& a) { return pointwise(a, Pointwise::Relu); }
template <typename T> Var<T> sigmoid(const Var<T>& a) { return pointwise(a, Pointwise::Sigmoid); }
template <typename T> Var<T> clip_unit(const Var<T>& a) { return pointwise(a, Pointwise::ClipUnit); }
template <typename T> Var<T> one_minus(const Var<T>& a) { return add_scalar(scale(a, T{-1}), T{1}); }
template <typename T> Var<T> mse(const Var<T>& a, const Var<T>& b) { return mean(square(sub(a, b))); }

}  // namespace dmad::ops
