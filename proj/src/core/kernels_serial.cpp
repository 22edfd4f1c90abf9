#include <cmath>
#include <string>

#include "dmad/core/kernels.hpp"

namespace dmad::kernels {

ConvGeometry ConvGeometry::make(const Shape& input, const Shape& kernel, int64_t stride,
                                int64_t padding) {
    require_rank(input, 4, "conv input");
    require_rank(kernel, 4, "conv kernel");
    if (stride <= 0) throw ShapeError("conv: stride must be positive, got " + std::to_string(stride));
    if (padding < 0) throw ShapeError("conv: padding must be nonnegative");
    if (input[1] != kernel[1]) {
        throw ShapeError("conv: channel dimension mismatch, input has " + std::to_string(input[1]) +
                         " channels but kernel expects " + std::to_string(kernel[1]));
    }
    ConvGeometry g;
    g.batch = input[0];
    g.in_channels = input[1];
    g.in_h = input[2];
    g.in_w = input[3];
    g.out_channels = kernel[0];
    g.kernel_h = kernel[2];
    g.kernel_w = kernel[3];
    g.stride = stride;
    g.padding = padding;
    if (g.kernel_h > g.in_h + 2 * padding) {
        throw ShapeError("conv: kernel height " + std::to_string(g.kernel_h) +
                         " exceeds padded input height " + std::to_string(g.in_h + 2 * padding));
    }
    if (g.kernel_w > g.in_w + 2 * padding) {
        throw ShapeError("conv: kernel width " + std::to_string(g.kernel_w) +
                         " exceeds padded input width " + std::to_string(g.in_w + 2 * padding));
    }
    g.out_h = (g.in_h + 2 * padding - g.kernel_h) / stride + 1;
    g.out_w = (g.in_w + 2 * padding - g.kernel_w) / stride + 1;
    return g;
}

SampleGeometry SampleGeometry::make(const Shape& input, const Shape& grid) {
    require_rank(input, 4, "grid_sample input");
    require_rank(grid, 4, "grid_sample grid");
    if (grid[3] != 2) throw ShapeError("grid_sample: grid last dimension must be 2, got " + shape_str(grid));
    if (input[0] != grid[0]) {
        throw ShapeError("grid_sample: batch size mismatch, input " + std::to_string(input[0]) +
                         " vs grid " + std::to_string(grid[0]));
    }
    SampleGeometry g;
    g.batch = input[0];
    g.channels = input[1];
    g.in_h = input[2];
    g.in_w = input[3];
    g.out_h = grid[1];
    g.out_w = grid[2];
    return g;
}

namespace serial {

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* kernel, T* output) {
    for (int64_t n = 0; n < g.batch; ++n)
        for (int64_t f = 0; f < g.out_channels; ++f)
            for (int64_t oy = 0; oy < g.out_h; ++oy)
                for (int64_t ox = 0; ox < g.out_w; ++ox) {
                    T acc{0};
                    for (int64_t c = 0; c < g.in_channels; ++c)
                        for (int64_t ky = 0; ky < g.kernel_h; ++ky) {
                            const int64_t iy = oy * g.stride + ky - g.padding;
                            if (iy < 0 || iy >= g.in_h) continue;
                            for (int64_t kx = 0; kx < g.kernel_w; ++kx) {
                                const int64_t ix = ox * g.stride + kx - g.padding;
                                if (ix < 0 || ix >= g.in_w) continue;
                                acc += input[((n * g.in_channels + c) * g.in_h + iy) * g.in_w + ix] *
                                       kernel[((f * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx];
                            }
                        }
                    output[((n * g.out_channels + f) * g.out_h + oy) * g.out_w + ox] = acc;
                }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* grad_out, const T* kernel, T* grad_in) {
    for (int64_t n = 0; n < g.batch; ++n)
        for (int64_t f = 0; f < g.out_channels; ++f)
            for (int64_t oy = 0; oy < g.out_h; ++oy)
                for (int64_t ox = 0; ox < g.out_w; ++ox) {
                    const T go = grad_out[((n * g.out_channels + f) * g.out_h + oy) * g.out_w + ox];
                    for (int64_t c = 0; c < g.in_channels; ++c)
                        for (int64_t ky = 0; ky < g.kernel_h; ++ky) {
                            const int64_t iy = oy * g.stride + ky - g.padding;
                            if (iy < 0 || iy >= g.in_h) continue;
                            for (int64_t kx = 0; kx < g.kernel_w; ++kx) {
                                const int64_t ix = ox * g.stride + kx - g.padding;
                                if (ix < 0 || ix >= g.in_w) continue;
                                grad_in[((n * g.in_channels + c) * g.in_h + iy) * g.in_w + ix] +=
                                    go * kernel[((f * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx];
                            }
                        }
                }
}

template <typename T>
void conv2d_backward_kernel(const ConvGeometry& g, const T* grad_out, const T* input,
                            T* grad_kernel) {
    for (int64_t n = 0; n < g.batch; ++n)
        for (int64_t f = 0; f < g.out_channels; ++f)
            for (int64_t oy = 0; oy < g.out_h; ++oy)
                for (int64_t ox = 0; ox < g.out_w; ++ox) {
                    const T go = grad_out[((n * g.out_channels + f) * g.out_h + oy) * g.out_w + ox];
                    for (int64_t c = 0; c < g.in_channels; ++c)
                        for (int64_t ky = 0; ky < g.kernel_h; ++ky) {
                            const int64_t iy = oy * g.stride + ky - g.padding;
                            if (iy < 0 || iy >= g.in_h) continue;
                            for (int64_t kx = 0; kx < g.kernel_w; ++kx) {
                                const int64_t ix = ox * g.stride + kx - g.padding;
                                if (ix < 0 || ix >= g.in_w) continue;
                                grad_kernel[((f * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx] +=
                                    go * input[((n * g.in_channels + c) * g.in_h + iy) * g.in_w + ix];
                            }
                        }
                }
}

template <typename T>
void grid_sample_forward(const SampleGeometry& g, const T* input, const T* grid, T* output) {
    const int64_t plane = g.in_h * g.in_w;
    for (int64_t n = 0; n < g.batch; ++n)
        for (int64_t oy = 0; oy < g.out_h; ++oy)
            for (int64_t ox = 0; ox < g.out_w; ++ox) {
                const T* gp = grid + ((n * g.out_h + oy) * g.out_w + ox) * 2;
                bool in_x = false, in_y = false;
                const T px = unnormalize_clamped(gp[0], g.in_w, in_x);
                const T py = unnormalize_clamped(gp[1], g.in_h, in_y);
                const int64_t x0 = static_cast<int64_t>(std::floor(px));
                const int64_t y0 = static_cast<int64_t>(std::floor(py));
                const int64_t x1 = std::min(x0 + 1, g.in_w - 1);
                const int64_t y1 = std::min(y0 + 1, g.in_h - 1);
                const T fx = px - static_cast<T>(x0);
                const T fy = py - static_cast<T>(y0);
                for (int64_t c = 0; c < g.channels; ++c) {
                    const T* src = input + (n * g.channels + c) * plane;
                    const T a = src[y0 * g.in_w + x0], b = src[y0 * g.in_w + x1];
                    const T d0 = src[y1 * g.in_w + x0], d1 = src[y1 * g.in_w + x1];
                    const T top = a + fx * (b - a);
                    const T bot = d0 + fx * (d1 - d0);
                    output[((n * g.channels + c) * g.out_h + oy) * g.out_w + ox] = top + fy * (bot - top);
                }
            }
}

template <typename T>
void grid_sample_backward(const SampleGeometry& g, const T* input, const T* grid,
                          const T* grad_out, T* grad_in, T* grad_grid) {
    const int64_t plane = g.in_h * g.in_w;
    const T sx = static_cast<T>(g.in_w - 1) / T{2};
    const T sy = static_cast<T>(g.in_h - 1) / T{2};
    for (int64_t n = 0; n < g.batch; ++n)
        for (int64_t oy = 0; oy < g.out_h; ++oy)
            for (int64_t ox = 0; ox < g.out_w; ++ox) {
                const int64_t gi = ((n * g.out_h + oy) * g.out_w + ox) * 2;
                bool in_x = false, in_y = false;
                const T px = unnormalize_clamped(grid[gi], g.in_w, in_x);
                const T py = unnormalize_clamped(grid[gi + 1], g.in_h, in_y);
                const int64_t x0 = static_cast<int64_t>(std::floor(px));
                const int64_t y0 = static_cast<int64_t>(std::floor(py));
                const int64_t x1 = std::min(x0 + 1, g.in_w - 1);
                const int64_t y1 = std::min(y0 + 1, g.in_h - 1);
                const T fx = px - static_cast<T>(x0);
                const T fy = py - static_cast<T>(y0);
                T dpx{0}, dpy{0};
                for (int64_t c = 0; c < g.channels; ++c) {
                    const T go = grad_out[((n * g.channels + c) * g.out_h + oy) * g.out_w + ox];
                    const T* src = input + (n * g.channels + c) * plane;
                    const T a = src[y0 * g.in_w + x0], b = src[y0 * g.in_w + x1];
                    const T d0 = src[y1 * g.in_w + x0], d1 = src[y1 * g.in_w + x1];
                    if (grad_in) {
                        T* dst = grad_in + (n * g.channels + c) * plane;
                        dst[y0 * g.in_w + x0] += go * (T{1} - fy) * (T{1} - fx);
                        dst[y0 * g.in_w + x1] += go * (T{1} - fy) * fx;
                        dst[y1 * g.in_w + x0] += go * fy * (T{1} - fx);
                        dst[y1 * g.in_w + x1] += go * fy * fx;
                    }
                    const T top = a + fx * (b - a);
                    const T bot = d0 + fx * (d1 - d0);
                    dpx += go * ((T{1} - fy) * (b - a) + fy * (d1 - d0));
                    dpy += go * (bot - top);
                }
                if (grad_grid) {
                    if (in_x) grad_grid[gi] += dpx * sx;
                    if (in_y) grad_grid[gi + 1] += dpy * sy;
                }
            }
}

template <typename T>
void upsample_forward(int64_t planes, int64_t h, int64_t w, int64_t out_h, int64_t out_w,
                      const T* input, T* output) {
    for (int64_t p = 0; p < planes; ++p)
        for (int64_t oy = 0; oy < out_h; ++oy) {
            const T sy = out_h > 1 ? static_cast<T>(oy * (h - 1)) / static_cast<T>(out_h - 1) : T{0};
            const int64_t y0 = static_cast<int64_t>(std::floor(sy));
            const int64_t y1 = std::min(y0 + 1, h - 1);
            const T fy = sy - static_cast<T>(y0);
            for (int64_t ox = 0; ox < out_w; ++ox) {
                const T sx = out_w > 1 ? static_cast<T>(ox * (w - 1)) / static_cast<T>(out_w - 1) : T{0};
                const int64_t x0 = static_cast<int64_t>(std::floor(sx));
                const int64_t x1 = std::min(x0 + 1, w - 1);
                const T fx = sx - static_cast<T>(x0);
                const T* src = input + p * h * w;
                const T a = src[y0 * w + x0], b = src[y0 * w + x1];
                const T c = src[y1 * w + x0], d = src[y1 * w + x1];
                const T top = a + fx * (b - a);
                const T bot = c + fx * (d - c);
                output[(p * out_h + oy) * out_w + ox] = top + fy * (bot - top);
            }
        }
}

template <typename T>
void upsample_backward(int64_t planes, int64_t h, int64_t w, int64_t out_h, int64_t out_w,
                       const T* grad_out, T* grad_in) {
    for (int64_t p = 0; p < planes; ++p)
        for (int64_t oy = 0; oy < out_h; ++oy) {
            const T sy = out_h > 1 ? static_cast<T>(oy * (h - 1)) / static_cast<T>(out_h - 1) : T{0};
            const int64_t y0 = static_cast<int64_t>(std::floor(sy));
            const int64_t y1 = std::min(y0 + 1, h - 1);
            const T fy = sy - static_cast<T>(y0);
            for (int64_t ox = 0; ox < out_w; ++ox) {
                const T sx = out_w > 1 ? static_cast<T>(ox * (w - 1)) / static_cast<T>(out_w - 1) : T{0};
                const int64_t x0 = static_cast<int64_t>(std::floor(sx));
                const int64_t x1 = std::min(x0 + 1, w - 1);
                const T fx = sx - static_cast<T>(x0);
                const T go = grad_out[(p * out_h + oy) * out_w + ox];
                T* dst = grad_in + p * h * w;
                dst[y0 * w + x0] += go * (T{1} - fy) * (T{1} - fx);
                dst[y0 * w + x1] += go * (T{1} - fy) * fx;
                dst[y1 * w + x0] += go * fy * (T{1} - fx);
                dst[y1 * w + x1] += go * fy * fx;
            }
        }
}

#define DMAD_INSTANTIATE_KERNELS(T)                                                              \
    template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, T*);                \
    template void conv2d_backward_input<T>(const ConvGeometry&, const T*, const T*, T*);         \
    template void conv2d_backward_kernel<T>(const ConvGeometry&, const T*, const T*, T*);        \
    template void grid_sample_forward<T>(const SampleGeometry&, const T*, const T*, T*);         \
    template void grid_sample_backward<T>(const SampleGeometry&, const T*, const T*, const T*,   \
                                          T*, T*);                                               \
    template void upsample_forward<T>(int64_t, int64_t, int64_t, int64_t, int64_t, const T*, T*); \
    template void upsample_backward<T>(int64_t, int64_t, int64_t, int64_t, int64_t, const T*, T*);

DMAD_INSTANTIATE_KERNELS(float)
DMAD_INSTANTIATE_KERNELS(double)

}  // namespace serial
}  // namespace dmad::kernels
