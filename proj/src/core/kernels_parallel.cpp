#include <algorithm>
#include <cmath>
#include <vector>

#include "dmad/core/kernels.hpp"

namespace dmad::kernels::parallel {
namespace {

// col[ck, p] with ck = (c * kh + ky) * kw + kx and p = oy * out_w + ox.
template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* col) {
    const int64_t positions = g.out_h * g.out_w;
    for (int64_t c = 0; c < g.in_channels; ++c)
        for (int64_t ky = 0; ky < g.kernel_h; ++ky)
            for (int64_t kx = 0; kx < g.kernel_w; ++kx) {
                T* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * positions;
                const T* plane = image + c * g.in_h * g.in_w;
                for (int64_t oy = 0; oy < g.out_h; ++oy) {
                    const int64_t iy = oy * g.stride + ky - g.padding;
                    T* dst = row + oy * g.out_w;
                    if (iy < 0 || iy >= g.in_h) {
                        std::fill(dst, dst + g.out_w, T{0});
                        continue;
                    }
                    const T* src = plane + iy * g.in_w;
                    for (int64_t ox = 0; ox < g.out_w; ++ox) {
                        const int64_t ix = ox * g.stride + kx - g.padding;
                        dst[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : T{0};
                    }
                }
            }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* image) {
    const int64_t positions = g.out_h * g.out_w;
    for (int64_t c = 0; c < g.in_channels; ++c)
        for (int64_t ky = 0; ky < g.kernel_h; ++ky)
            for (int64_t kx = 0; kx < g.kernel_w; ++kx) {
                const T* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * positions;
                T* plane = image + c * g.in_h * g.in_w;
                for (int64_t oy = 0; oy < g.out_h; ++oy) {
                    const int64_t iy = oy * g.stride + ky - g.padding;
                    if (iy < 0 || iy >= g.in_h) continue;
                    const T* src = row + oy * g.out_w;
                    T* dst = plane + iy * g.in_w;
                    for (int64_t ox = 0; ox < g.out_w; ++ox) {
                        const int64_t ix = ox * g.stride + kx - g.padding;
                        if (ix >= 0 && ix < g.in_w) dst[ix] += src[ox];
                    }
                }
            }
}

template <typename T>
inline void axpy(int64_t n, T a, const T* __restrict x, T* __restrict y) {
    for (int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* kernel, T* output) {
    const int64_t positions = g.out_h * g.out_w;
    const int64_t depth = g.in_channels * g.kernel_h * g.kernel_w;
#pragma omp parallel
    {
        std::vector<T> col(static_cast<size_t>(depth * positions));
#pragma omp for schedule(static)
        for (int64_t n = 0; n < g.batch; ++n) {
            im2col(g, input + n * g.in_channels * g.in_h * g.in_w, col.data());
            T* out = output + n * g.out_channels * positions;
            std::fill(out, out + g.out_channels * positions, T{0});
            for (int64_t f = 0; f < g.out_channels; ++f) {
                T* orow = out + f * positions;
                const T* krow = kernel + f * depth;
                for (int64_t k = 0; k < depth; ++k) axpy(positions, krow[k], col.data() + k * positions, orow);
            }
        }
    }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* grad_out, const T* kernel, T* grad_in) {
    const int64_t positions = g.out_h * g.out_w;
    const int64_t depth = g.in_channels * g.kernel_h * g.kernel_w;
#pragma omp parallel
    {
        std::vector<T> col(static_cast<size_t>(depth * positions));
#pragma omp for schedule(static)
        for (int64_t n = 0; n < g.batch; ++n) {
            std::fill(col.begin(), col.end(), T{0});
            const T* go = grad_out + n * g.out_channels * positions;
            for (int64_t f = 0; f < g.out_channels; ++f) {
                const T* krow = kernel + f * depth;
                const T* grow = go + f * positions;
                for (int64_t k = 0; k < depth; ++k) axpy(positions, krow[k], grow, col.data() + k * positions);
            }
            col2im_add(g, col.data(), grad_in + n * g.in_channels * g.in_h * g.in_w);
        }
    }
}

template <typename T>
void conv2d_backward_kernel(const ConvGeometry& g, const T* grad_out, const T* input,
                            T* grad_kernel) {
    const int64_t positions = g.out_h * g.out_w;
    const int64_t depth = g.in_channels * g.kernel_h * g.kernel_w;
    // Transposed columns for every sample: cols_t[n][p][k].
    std::vector<T> cols_t(static_cast<size_t>(g.batch * positions * depth));
#pragma omp parallel
    {
        std::vector<T> col(static_cast<size_t>(depth * positions));
#pragma omp for schedule(static)
        for (int64_t n = 0; n < g.batch; ++n) {
            im2col(g, input + n * g.in_channels * g.in_h * g.in_w, col.data());
            T* dst = cols_t.data() + n * positions * depth;
            for (int64_t k = 0; k < depth; ++k)
                for (int64_t p = 0; p < positions; ++p) dst[p * depth + k] = col[k * positions + p];
        }
    }
#pragma omp parallel for schedule(static)
    for (int64_t f = 0; f < g.out_channels; ++f) {
        T* krow = grad_kernel + f * depth;
        for (int64_t n = 0; n < g.batch; ++n) {
            const T* grow = grad_out + (n * g.out_channels + f) * positions;
            const T* ct = cols_t.data() + n * positions * depth;
            for (int64_t p = 0; p < positions; ++p) axpy(depth, grow[p], ct + p * depth, krow);
        }
    }
}

template <typename T>
void grid_sample_forward(const SampleGeometry& g, const T* input, const T* grid, T* output) {
    const int64_t plane = g.in_h * g.in_w;
    const int64_t out_plane = g.out_h * g.out_w;
#pragma omp parallel for schedule(static)
    for (int64_t n = 0; n < g.batch; ++n) {
        for (int64_t q = 0; q < out_plane; ++q) {
            const T* gp = grid + (n * out_plane + q) * 2;
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
                output[(n * g.channels + c) * out_plane + q] = top + fy * (bot - top);
            }
        }
    }
}

template <typename T>
void grid_sample_backward(const SampleGeometry& g, const T* input, const T* grid,
                          const T* grad_out, T* grad_in, T* grad_grid) {
    const int64_t plane = g.in_h * g.in_w;
    const int64_t out_plane = g.out_h * g.out_w;
    const T sx = static_cast<T>(g.in_w - 1) / T{2};
    const T sy = static_cast<T>(g.in_h - 1) / T{2};
#pragma omp parallel for schedule(static)
    for (int64_t n = 0; n < g.batch; ++n) {
        for (int64_t q = 0; q < out_plane; ++q) {
            const int64_t gi = (n * out_plane + q) * 2;
            bool in_x = false, in_y = false;
            const T px = unnormalize_clamped(grid[gi], g.in_w, in_x);
            const T py = unnormalize_clamped(grid[gi + 1], g.in_h, in_y);
            const int64_t x0 = static_cast<int64_t>(std::floor(px));
            const int64_t y0 = static_cast<int64_t>(std::floor(py));
            const int64_t x1 = std::min(x0 + 1, g.in_w - 1);
            const int64_t y1 = std::min(y0 + 1, g.in_h - 1);
            const T fx = px - static_cast<T>(x0);
            const T fy = py - static_cast<T>(y0);
            const T w00 = (T{1} - fy) * (T{1} - fx), w01 = (T{1} - fy) * fx;
            const T w10 = fy * (T{1} - fx), w11 = fy * fx;
            T dpx{0}, dpy{0};
            for (int64_t c = 0; c < g.channels; ++c) {
                const T go = grad_out[(n * g.channels + c) * out_plane + q];
                const T* src = input + (n * g.channels + c) * plane;
                const T a = src[y0 * g.in_w + x0], b = src[y0 * g.in_w + x1];
                const T d0 = src[y1 * g.in_w + x0], d1 = src[y1 * g.in_w + x1];
                if (grad_in) {
                    T* dst = grad_in + (n * g.channels + c) * plane;
                    dst[y0 * g.in_w + x0] += go * w00;
                    dst[y0 * g.in_w + x1] += go * w01;
                    dst[y1 * g.in_w + x0] += go * w10;
                    dst[y1 * g.in_w + x1] += go * w11;
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
}

namespace {

template <typename T>
struct AxisMap {
    std::vector<int64_t> lo, hi;
    std::vector<T> frac;

    AxisMap(int64_t in, int64_t out) : lo(out), hi(out), frac(out) {
        for (int64_t o = 0; o < out; ++o) {
            const T s = out > 1 ? static_cast<T>(o * (in - 1)) / static_cast<T>(out - 1) : T{0};
            lo[o] = static_cast<int64_t>(std::floor(s));
            hi[o] = std::min(lo[o] + 1, in - 1);
            frac[o] = s - static_cast<T>(lo[o]);
        }
    }
};

}  // namespace

template <typename T>
void upsample_forward(int64_t planes, int64_t h, int64_t w, int64_t out_h, int64_t out_w,
                      const T* input, T* output) {
    const AxisMap<T> ym(h, out_h), xm(w, out_w);
#pragma omp parallel for schedule(static)
    for (int64_t p = 0; p < planes; ++p) {
        const T* src = input + p * h * w;
        for (int64_t oy = 0; oy < out_h; ++oy) {
            const T* r0 = src + ym.lo[oy] * w;
            const T* r1 = src + ym.hi[oy] * w;
            const T fy = ym.frac[oy];
            T* dst = output + (p * out_h + oy) * out_w;
            for (int64_t ox = 0; ox < out_w; ++ox) {
                const T fx = xm.frac[ox];
                const T top = r0[xm.lo[ox]] + fx * (r0[xm.hi[ox]] - r0[xm.lo[ox]]);
                const T bot = r1[xm.lo[ox]] + fx * (r1[xm.hi[ox]] - r1[xm.lo[ox]]);
                dst[ox] = top + fy * (bot - top);
            }
        }
    }
}

template <typename T>
void upsample_backward(int64_t planes, int64_t h, int64_t w, int64_t out_h, int64_t out_w,
                       const T* grad_out, T* grad_in) {
    const AxisMap<T> ym(h, out_h), xm(w, out_w);
#pragma omp parallel for schedule(static)
    for (int64_t p = 0; p < planes; ++p) {
        T* dst = grad_in + p * h * w;
        for (int64_t oy = 0; oy < out_h; ++oy) {
            T* r0 = dst + ym.lo[oy] * w;
            T* r1 = dst + ym.hi[oy] * w;
            const T fy = ym.frac[oy];
            const T* go = grad_out + (p * out_h + oy) * out_w;
            for (int64_t ox = 0; ox < out_w; ++ox) {
                const T fx = xm.frac[ox];
                r0[xm.lo[ox]] += go[ox] * (T{1} - fy) * (T{1} - fx);
                r0[xm.hi[ox]] += go[ox] * (T{1} - fy) * fx;
                r1[xm.lo[ox]] += go[ox] * fy * (T{1} - fx);
                r1[xm.hi[ox]] += go[ox] * fy * fx;
            }
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

}  // namespace dmad::kernels::parallel
