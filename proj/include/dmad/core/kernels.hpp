#pragma once

// Raw array kernels behind the differentiable ops.
//
// Every kernel exists twice: `serial::` is the straightforward nested-loop
// reference, `parallel::` is the production path (im2col + GEMM for the
// convolutions, OpenMP over the batch/channel axes). Both produce results in a
// fixed reduction order, so each is deterministic regardless of thread count.
// The unit tests hold the two against each other and against test-local oracles.
//
// Forward kernels overwrite their output; backward kernels accumulate (+=)
// into the gradient buffers, and a null gradient pointer skips that output.

#include <cstdint>

#include "dmad/core/tensor.hpp"

namespace dmad::kernels {

struct ConvGeometry {
    int64_t batch = 0;
    int64_t in_channels = 0;
    int64_t in_h = 0, in_w = 0;
    int64_t out_channels = 0;
    int64_t kernel_h = 0, kernel_w = 0;
    int64_t stride = 1;
    int64_t padding = 0;
    int64_t out_h = 0, out_w = 0;

    // Validates extents and fills out_h/out_w. Throws ShapeError naming the
    // offending dimension.
    static ConvGeometry make(const Shape& input, const Shape& kernel, int64_t stride,
                             int64_t padding);
};

// Grid layout: [N, Ho, Wo, 2], entries (x, y) in align-corners normalized
// coordinates; samples outside [-1, 1] are clamped to the border.
struct SampleGeometry {
    int64_t batch = 0, channels = 0;
    int64_t in_h = 0, in_w = 0;
    int64_t out_h = 0, out_w = 0;

    static SampleGeometry make(const Shape& input, const Shape& grid);
};

namespace serial {

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* kernel, T* output);
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* grad_out, const T* kernel, T* grad_in);
template <typename T>
void conv2d_backward_kernel(const ConvGeometry& g, const T* grad_out, const T* input,
                            T* grad_kernel);

template <typename T>
void grid_sample_forward(const SampleGeometry& g, const T* input, const T* grid, T* output);
template <typename T>
void grid_sample_backward(const SampleGeometry& g, const T* input, const T* grid,
                          const T* grad_out, T* grad_in, T* grad_grid);

template <typename T>
void upsample_forward(int64_t planes, int64_t h, int64_t w, int64_t out_h, int64_t out_w,
                      const T* input, T* output);
template <typename T>
void upsample_backward(int64_t planes, int64_t h, int64_t w, int64_t out_h, int64_t out_w,
                       const T* grad_out, T* grad_in);

}  // namespace serial

namespace parallel {

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* kernel, T* output);
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* grad_out, const T* kernel, T* grad_in);
template <typename T>
void conv2d_backward_kernel(const ConvGeometry& g, const T* grad_out, const T* input,
                            T* grad_kernel);

template <typename T>
void grid_sample_forward(const SampleGeometry& g, const T* input, const T* grid, T* output);
template <typename T>
void grid_sample_backward(const SampleGeometry& g, const T* input, const T* grid,
                          const T* grad_out, T* grad_in, T* grad_grid);

template <typename T>
void upsample_forward(int64_t planes, int64_t h, int64_t w, int64_t out_h, int64_t out_w,
                      const T* input, T* output);
template <typename T>
void upsample_backward(int64_t planes, int64_t h, int64_t w, int64_t out_h, int64_t out_w,
                       const T* grad_out, T* grad_in);

}  // namespace parallel

// Maps a normalized coordinate to a pixel coordinate with border clamping.
// Returns the clamped pixel coordinate and sets `inside` to false when the
// clamp was active (the coordinate gradient is zero there).
template <typename T>
inline T unnormalize_clamped(T coord, int64_t extent, bool& inside);

}  // namespace dmad::kernels

#include "dmad/core/kernels_inl.hpp"
