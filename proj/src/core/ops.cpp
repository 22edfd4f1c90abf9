#include "dmad/core/ops.hpp"

#include <cmath>
#include <string>

#include "dmad/core/kernels.hpp"

namespace dmad::ops {

namespace {

template <typename T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same(a, b, "add");
    Tensor<T> out = a.value();
    for (size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return make_result<T>(std::move(out), {a, b}, "add", [](Node<T>& self) {
        if (self.input_wants_grad(0)) self.inputs[0]->accumulate(self.grad);
        if (self.input_wants_grad(1)) self.inputs[1]->accumulate(self.grad);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same(a, b, "sub");
    Tensor<T> out = a.value();
    for (size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make_result<T>(std::move(out), {a, b}, "sub", [](Node<T>& self) {
        if (self.input_wants_grad(0)) self.inputs[0]->accumulate(self.grad);
        if (self.input_wants_grad(1)) {
            auto& g = self.inputs[1]->grad_buffer();
            for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same(a, b, "mul");
    Tensor<T> out = a.value();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_result<T>(std::move(out), {a, b}, "mul", [](Node<T>& self) {
        const auto& va = self.inputs[0]->value;
        const auto& vb = self.inputs[1]->value;
        if (self.input_wants_grad(0)) {
            auto& g = self.inputs[0]->grad_buffer();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * vb[i];
        }
        if (self.input_wants_grad(1)) {
            auto& g = self.inputs[1]->grad_buffer();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * va[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
    Tensor<T> out = a.value();
    for (auto& v : out.vec()) v *= factor;
    return make_result<T>(std::move(out), {a}, "scale", [factor](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T offset) {
    Tensor<T> out = a.value();
    for (auto& v : out.vec()) v += offset;
    return make_result<T>(std::move(out), {a}, "add_scalar",
                          [](Node<T>& self) { self.inputs[0]->accumulate(self.grad); });
}

template <typename T>
Var<T> square(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& v : out.vec()) v *= v;
    return make_result<T>(std::move(out), {a}, "square", [](Node<T>& self) {
        const auto& x = self.inputs[0]->value;
        auto& g = self.inputs[0]->grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * T{2} * x[i];
    });
}

template <typename T>
Var<T> abs(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& v : out.vec()) v = std::abs(v);
    return make_result<T>(std::move(out), {a}, "abs", [](Node<T>& self) {
        const auto& x = self.inputs[0]->value;
        auto& g = self.inputs[0]->grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) {
            const T s = x[i] > T{0} ? T{1} : (x[i] < T{0} ? T{-1} : T{0});
            g[i] += self.grad[i] * s;
        }
    });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
    T acc{0};
    for (T v : a.value().vec()) acc += v;
    return make_result<T>(Tensor<T>::scalar(acc), {a}, "sum", [](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        const T go = self.grad[0];
        for (size_t i = 0; i < g.size(); ++i) g[i] += go;
    });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    if (a.size() == 0) throw ShapeError("mean of empty tensor");
    T acc{0};
    for (T v : a.value().vec()) acc += v;
    const T n = static_cast<T>(a.size());
    return make_result<T>(Tensor<T>::scalar(acc / n), {a}, "mean", [n](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        const T go = self.grad[0] / n;
        for (size_t i = 0; i < g.size(); ++i) g[i] += go;
    });
}

template <typename T>
Var<T> pointwise(const Var<T>& a, Pointwise kind) {
    Tensor<T> out = a.value();
    switch (kind) {
        case Pointwise::Tanh:
            for (auto& v : out.vec()) v = std::tanh(v);
            break;
        case Pointwise::Relu:
            for (auto& v : out.vec()) v = v > T{0} ? v : T{0};
            break;
        case Pointwise::Sigmoid:
            for (auto& v : out.vec()) {
                v = v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
            }
            break;
        case Pointwise::ClipUnit:
            for (auto& v : out.vec()) v = std::clamp(v, T{-1}, T{1});
            break;
    }
    static constexpr const char* names[] = {"tanh", "relu", "sigmoid", "clip"};
    return make_result<T>(std::move(out), {a}, names[static_cast<int>(kind)], [kind](Node<T>& self) {
        const auto& x = self.inputs[0]->value;
        const auto& y = self.value;
        auto& g = self.inputs[0]->grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) {
            T d{0};
            switch (kind) {
                case Pointwise::Tanh: d = T{1} - y[i] * y[i]; break;
                case Pointwise::Relu: d = x[i] > T{0} ? T{1} : T{0}; break;
                case Pointwise::Sigmoid: d = y[i] * (T{1} - y[i]); break;
                case Pointwise::ClipUnit: d = (x[i] >= T{-1} && x[i] <= T{1}) ? T{1} : T{0}; break;
            }
            g[i] += self.grad[i] * d;
        }
    });
}

template <typename T>
Var<T> stop_gradient(const Var<T>& a) {
    auto v = Var<T>::constant(a.value());
    v.node()->op = "stop_gradient";
    return v;
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, int64_t stride, int64_t padding) {
    const auto g = kernels::ConvGeometry::make(input.shape(), kernel.shape(), stride, padding);
    Tensor<T> out({g.batch, g.out_channels, g.out_h, g.out_w});
    kernels::parallel::conv2d_forward(g, input.value().ptr(), kernel.value().ptr(), out.ptr());
    return make_result<T>(std::move(out), {input, kernel}, "conv2d", [g](Node<T>& self) {
        if (self.input_wants_grad(0)) {
            kernels::parallel::conv2d_backward_input(g, self.grad.ptr(), self.inputs[1]->value.ptr(),
                                                     self.inputs[0]->grad_buffer().ptr());
        }
        if (self.input_wants_grad(1)) {
            kernels::parallel::conv2d_backward_kernel(g, self.grad.ptr(), self.inputs[0]->value.ptr(),
                                                      self.inputs[1]->grad_buffer().ptr());
        }
    });
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& input, const Var<T>& kernel, int64_t stride, int64_t padding) {
    require_rank(input.shape(), 4, "conv_transpose2d input");
    require_rank(kernel.shape(), 4, "conv_transpose2d kernel");
    if (input.dim(1) != kernel.dim(0)) {
        throw ShapeError("conv_transpose2d: input has " + std::to_string(input.dim(1)) +
                         " channels but kernel dimension 0 is " + std::to_string(kernel.dim(0)));
    }
    const int64_t out_h = (input.dim(2) - 1) * stride - 2 * padding + kernel.dim(2);
    const int64_t out_w = (input.dim(3) - 1) * stride - 2 * padding + kernel.dim(3);
    if (out_h <= 0 || out_w <= 0) throw ShapeError("conv_transpose2d: empty output extent");
    const Shape out_shape{input.dim(0), kernel.dim(1), out_h, out_w};
    // Geometry of the conv2d whose adjoint this is.
    const auto g = kernels::ConvGeometry::make(out_shape, kernel.shape(), stride, padding);
    if (g.out_h != input.dim(2) || g.out_w != input.dim(3)) {
        throw ShapeError("conv_transpose2d: inconsistent stride/padding for input " + shape_str(input.shape()));
    }
    Tensor<T> out(out_shape);
    kernels::parallel::conv2d_backward_input(g, input.value().ptr(), kernel.value().ptr(), out.ptr());
    return make_result<T>(std::move(out), {input, kernel}, "conv_transpose2d", [g](Node<T>& self) {
        if (self.input_wants_grad(0)) {
            auto& gin = self.inputs[0]->grad_buffer();
            Tensor<T> tmp(gin.shape());
            kernels::parallel::conv2d_forward(g, self.grad.ptr(), self.inputs[1]->value.ptr(), tmp.ptr());
            for (size_t i = 0; i < gin.size(); ++i) gin[i] += tmp[i];
        }
        if (self.input_wants_grad(1)) {
            kernels::parallel::conv2d_backward_kernel(g, self.inputs[0]->value.ptr(), self.grad.ptr(),
                                                      self.inputs[1]->grad_buffer().ptr());
        }
    });
}

template <typename T>
Var<T> add_bias(const Var<T>& input, const Var<T>& bias) {
    require_rank(input.shape(), 4, "add_bias input");
    if (bias.size() != static_cast<size_t>(input.dim(1))) {
        throw ShapeError("add_bias: bias length " + std::to_string(bias.size()) + " vs channels " +
                         std::to_string(input.dim(1)));
    }
    const int64_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
    Tensor<T> out = input.value();
    for (int64_t b = 0; b < n; ++b)
        for (int64_t ch = 0; ch < c; ++ch) {
            T* p = out.ptr() + (b * c + ch) * plane;
            const T v = bias.value()[static_cast<size_t>(ch)];
            for (int64_t i = 0; i < plane; ++i) p[i] += v;
        }
    return make_result<T>(std::move(out), {input, bias}, "add_bias", [n, c, plane](Node<T>& self) {
        if (self.input_wants_grad(0)) self.inputs[0]->accumulate(self.grad);
        if (self.input_wants_grad(1)) {
            auto& gb = self.inputs[1]->grad_buffer();
            for (int64_t b = 0; b < n; ++b)
                for (int64_t ch = 0; ch < c; ++ch) {
                    const T* p = self.grad.ptr() + (b * c + ch) * plane;
                    T acc{0};
                    for (int64_t i = 0; i < plane; ++i) acc += p[i];
                    gb[static_cast<size_t>(ch)] += acc;
                }
        }
    });
}

template <typename T>
Var<T> grid_sample(const Var<T>& input, const Var<T>& grid) {
    const auto g = kernels::SampleGeometry::make(input.shape(), grid.shape());
    Tensor<T> out({g.batch, g.channels, g.out_h, g.out_w});
    kernels::parallel::grid_sample_forward(g, input.value().ptr(), grid.value().ptr(), out.ptr());
    return make_result<T>(std::move(out), {input, grid}, "grid_sample", [g](Node<T>& self) {
        T* gin = self.input_wants_grad(0) ? self.inputs[0]->grad_buffer().ptr() : nullptr;
        T* ggrid = self.input_wants_grad(1) ? self.inputs[1]->grad_buffer().ptr() : nullptr;
        kernels::parallel::grid_sample_backward(g, self.inputs[0]->value.ptr(), self.inputs[1]->value.ptr(),
                                                self.grad.ptr(), gin, ggrid);
    });
}

template <typename T>
Var<T> bilinear_upsample(const Var<T>& input, int64_t out_h, int64_t out_w) {
    require_rank(input.shape(), 4, "bilinear_upsample");
    const int64_t h = input.dim(2), w = input.dim(3);
    if (out_h < h || out_w < w) {
        throw ShapeError("bilinear_upsample: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                         " is smaller than source " + std::to_string(h) + "x" + std::to_string(w));
    }
    if (out_h == h && out_w == w) return input;
    const int64_t planes = input.dim(0) * input.dim(1);
    Tensor<T> out({input.dim(0), input.dim(1), out_h, out_w});
    kernels::parallel::upsample_forward(planes, h, w, out_h, out_w, input.value().ptr(), out.ptr());
    return make_result<T>(std::move(out), {input}, "bilinear_upsample", [=](Node<T>& self) {
        kernels::parallel::upsample_backward(planes, h, w, out_h, out_w, self.grad.ptr(),
                                             self.inputs[0]->grad_buffer().ptr());
    });
}

template <typename T>
std::pair<Var<T>, Var<T>> spatial_gradient(const Var<T>& field) {
    require_rank(field.shape(), 4, "spatial_gradient");
    const int64_t planes = field.dim(0) * field.dim(1), h = field.dim(2), w = field.dim(3);
    if (h < 2 || w < 2) {
        throw ShapeError("spatial_gradient: height and width must be at least 2, got " + shape_str(field.shape()));
    }
    const auto& v = field.value();
    Tensor<T> dx(field.shape()), dy(field.shape());
    for (int64_t p = 0; p < planes; ++p)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                const size_t i = static_cast<size_t>((p * h + y) * w + x);
                if (x + 1 < w) dx[i] = v[i + 1] - v[i];
                if (y + 1 < h) dy[i] = v[i + static_cast<size_t>(w)] - v[i];
            }
    auto gx = make_result<T>(std::move(dx), {field}, "grad_x", [=](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (int64_t p = 0; p < planes; ++p)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x + 1 < w; ++x) {
                    const size_t i = static_cast<size_t>((p * h + y) * w + x);
                    g[i + 1] += self.grad[i];
                    g[i] -= self.grad[i];
                }
    });
    auto gy = make_result<T>(std::move(dy), {field}, "grad_y", [=](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (int64_t p = 0; p < planes; ++p)
            for (int64_t y = 0; y + 1 < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    const size_t i = static_cast<size_t>((p * h + y) * w + x);
                    g[i + static_cast<size_t>(w)] += self.grad[i];
                    g[i] -= self.grad[i];
                }
    });
    return {gx, gy};
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    const Shape& s0 = parts[0].shape();
    require_rank(s0, 4, "concat_channels");
    int64_t channels = 0;
    for (const auto& p : parts) {
        require_rank(p.shape(), 4, "concat_channels");
        if (p.dim(0) != s0[0] || p.dim(2) != s0[2] || p.dim(3) != s0[3]) {
            throw ShapeError("concat_channels: incompatible shapes " + shape_str(s0) + " and " +
                             shape_str(p.shape()));
        }
        channels += p.dim(1);
    }
    const int64_t n = s0[0], plane = s0[2] * s0[3];
    Tensor<T> out({n, channels, s0[2], s0[3]});
    std::vector<int64_t> widths;
    for (int64_t b = 0; b < n; ++b) {
        int64_t offset = 0;
        for (const auto& p : parts) {
            const int64_t c = p.dim(1);
            std::copy_n(p.value().ptr() + b * c * plane, c * plane, out.ptr() + (b * channels + offset) * plane);
            offset += c;
        }
    }
    for (const auto& p : parts) widths.push_back(p.dim(1));
    return make_result<T>(std::move(out), parts, "concat_channels", [=](Node<T>& self) {
        for (int64_t b = 0; b < n; ++b) {
            int64_t offset = 0;
            for (size_t k = 0; k < widths.size(); ++k) {
                const int64_t c = widths[k];
                if (self.input_wants_grad(k)) {
                    auto& g = self.inputs[k]->grad_buffer();
                    const T* src = self.grad.ptr() + (b * channels + offset) * plane;
                    T* dst = g.ptr() + b * c * plane;
                    for (int64_t i = 0; i < c * plane; ++i) dst[i] += src[i];
                }
                offset += c;
            }
        }
    });
}

template <typename T>
Var<T> slice_channels(const Var<T>& input, int64_t begin, int64_t end) {
    require_rank(input.shape(), 4, "slice_channels");
    const int64_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
    if (begin < 0 || end > c || begin >= end) {
        throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + std::to_string(c) + " channels");
    }
    const int64_t k = end - begin;
    Tensor<T> out({n, k, input.dim(2), input.dim(3)});
    for (int64_t b = 0; b < n; ++b) {
        std::copy_n(input.value().ptr() + (b * c + begin) * plane, k * plane, out.ptr() + b * k * plane);
    }
    return make_result<T>(std::move(out), {input}, "slice_channels", [=](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (int64_t b = 0; b < n; ++b) {
            const T* src = self.grad.ptr() + b * k * plane;
            T* dst = g.ptr() + (b * c + begin) * plane;
            for (int64_t i = 0; i < k * plane; ++i) dst[i] += src[i];
        }
    });
}

template <typename T>
Var<T> repeat_batch(const Var<T>& input, int64_t n) {
    if (input.shape().empty() || input.dim(0) != 1) {
        throw ShapeError("repeat_batch: expected leading extent 1, got " + shape_str(input.shape()));
    }
    if (n == 1) return input;
    Shape s = input.shape();
    s[0] = n;
    const size_t block = input.size();
    Tensor<T> out(s);
    for (int64_t b = 0; b < n; ++b) std::copy_n(input.value().ptr(), block, out.ptr() + b * block);
    return make_result<T>(std::move(out), {input}, "repeat_batch", [n, block](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (int64_t b = 0; b < n; ++b)
            for (size_t i = 0; i < block; ++i) g[i] += self.grad[b * block + i];
    });
}

template <typename T>
Var<T> repeat_channels(const Var<T>& input, int64_t c) {
    require_rank(input.shape(), 4, "repeat_channels");
    if (input.dim(1) != 1) throw ShapeError("repeat_channels: expected one channel, got " + shape_str(input.shape()));
    if (c == 1) return input;
    const int64_t n = input.dim(0), plane = input.dim(2) * input.dim(3);
    Tensor<T> out({n, c, input.dim(2), input.dim(3)});
    for (int64_t b = 0; b < n; ++b)
        for (int64_t ch = 0; ch < c; ++ch)
            std::copy_n(input.value().ptr() + b * plane, plane, out.ptr() + (b * c + ch) * plane);
    return make_result<T>(std::move(out), {input}, "repeat_channels", [=](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (int64_t b = 0; b < n; ++b)
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t i = 0; i < plane; ++i) g[b * plane + i] += self.grad[(b * c + ch) * plane + i];
    });
}

template <typename T>
Var<T> reshape(const Var<T>& input, Shape shape) {
    Tensor<T> out = input.value().reshaped(std::move(shape));
    return make_result<T>(std::move(out), {input}, "reshape", [](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

template <typename T>
Var<T> channel_norm(const Var<T>& input) {
    require_rank(input.shape(), 4, "channel_norm");
    const int64_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
    Tensor<T> out({n, 1, input.dim(2), input.dim(3)});
    const auto& v = input.value();
    for (int64_t b = 0; b < n; ++b)
        for (int64_t i = 0; i < plane; ++i) {
            T acc{0};
            for (int64_t ch = 0; ch < c; ++ch) {
                const T x = v[(b * c + ch) * plane + i];
                acc += x * x;
            }
            out[b * plane + i] = std::sqrt(acc);
        }
    return make_result<T>(std::move(out), {input}, "channel_norm", [=](Node<T>& self) {
        const auto& x = self.inputs[0]->value;
        auto& g = self.inputs[0]->grad_buffer();
        for (int64_t b = 0; b < n; ++b)
            for (int64_t i = 0; i < plane; ++i) {
                const T r = self.value[b * plane + i];
                if (r == T{0}) continue;
                const T go = self.grad[b * plane + i] / r;
                for (int64_t ch = 0; ch < c; ++ch) {
                    const size_t k = static_cast<size_t>((b * c + ch) * plane + i);
                    g[k] += go * x[k];
                }
            }
    });
}

template <typename T>
Tensor<T> identity_grid(int64_t n, int64_t h, int64_t w) {
    Tensor<T> grid({n, h, w, 2});
    for (int64_t b = 0; b < n; ++b)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                T* p = grid.ptr() + ((b * h + y) * w + x) * 2;
                p[0] = w > 1 ? T{-1} + T{2} * static_cast<T>(x) / static_cast<T>(w - 1) : T{0};
                p[1] = h > 1 ? T{-1} + T{2} * static_cast<T>(y) / static_cast<T>(h - 1) : T{0};
            }
    return grid;
}

template <typename T>
Var<T> offsets_to_grid(const Var<T>& offsets) {
    require_rank(offsets.shape(), 4, "offsets_to_grid");
    if (offsets.dim(1) != 2) throw ShapeError("offsets_to_grid: expected 2 channels, got " + shape_str(offsets.shape()));
    const int64_t n = offsets.dim(0), h = offsets.dim(2), w = offsets.dim(3), plane = h * w;
    Tensor<T> grid = identity_grid<T>(n, h, w);
    const auto& o = offsets.value();
    for (int64_t b = 0; b < n; ++b)
        for (int64_t i = 0; i < plane; ++i) {
            grid[(b * plane + i) * 2] += o[(b * 2) * plane + i];
            grid[(b * plane + i) * 2 + 1] += o[(b * 2 + 1) * plane + i];
        }
    return make_result<T>(std::move(grid), {offsets}, "offsets_to_grid", [=](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (int64_t b = 0; b < n; ++b)
            for (int64_t i = 0; i < plane; ++i) {
                g[(b * 2) * plane + i] += self.grad[(b * plane + i) * 2];
                g[(b * 2 + 1) * plane + i] += self.grad[(b * plane + i) * 2 + 1];
            }
    });
}

template <typename T>
Var<T> gather_items(const Var<T>& table, const std::vector<int64_t>& codes, int64_t n, int64_t h,
                    int64_t w) {
    require_rank(table.shape(), 2, "gather_items table");
    const int64_t items = table.dim(0), depth = table.dim(1), plane = h * w;
    if (static_cast<int64_t>(codes.size()) != n * plane) {
        throw ShapeError("gather_items: " + std::to_string(codes.size()) + " codes for " +
                         std::to_string(n * plane) + " locations");
    }
    Tensor<T> out({n, depth, h, w});
    for (int64_t b = 0; b < n; ++b)
        for (int64_t i = 0; i < plane; ++i) {
            const int64_t code = codes[static_cast<size_t>(b * plane + i)];
            if (code < 0 || code >= items) throw ShapeError("gather_items: code out of range");
            for (int64_t d = 0; d < depth; ++d) out[(b * depth + d) * plane + i] = table.value()[code * depth + d];
        }
    return make_result<T>(std::move(out), {table}, "gather_items", [=](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (int64_t b = 0; b < n; ++b)
            for (int64_t i = 0; i < plane; ++i) {
                const int64_t code = codes[static_cast<size_t>(b * plane + i)];
                for (int64_t d = 0; d < depth; ++d) g[code * depth + d] += self.grad[(b * depth + d) * plane + i];
            }
    });
}

#define DMAD_INSTANTIATE_OPS(T)                                                                   \
    template Var<T> add<T>(const Var<T>&, const Var<T>&);                                         \
    template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                         \
    template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                         \
    template Var<T> scale<T>(const Var<T>&, T);                                                   \
    template Var<T> add_scalar<T>(const Var<T>&, T);                                              \
    template Var<T> square<T>(const Var<T>&);                                                     \
    template Var<T> abs<T>(const Var<T>&);                                                        \
    template Var<T> sum<T>(const Var<T>&);                                                        \
    template Var<T> mean<T>(const Var<T>&);                                                       \
    template Var<T> pointwise<T>(const Var<T>&, Pointwise);                                       \
    template Var<T> stop_gradient<T>(const Var<T>&);                                              \
    template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, int64_t, int64_t);                    \
    template Var<T> conv_transpose2d<T>(const Var<T>&, const Var<T>&, int64_t, int64_t);          \
    template Var<T> add_bias<T>(const Var<T>&, const Var<T>&);                                    \
    template Var<T> grid_sample<T>(const Var<T>&, const Var<T>&);                                 \
    template Var<T> bilinear_upsample<T>(const Var<T>&, int64_t, int64_t);                        \
    template std::pair<Var<T>, Var<T>> spatial_gradient<T>(const Var<T>&);                        \
    template Var<T> concat_channels<T>(const std::vector<Var<T>>&);                               \
    template Var<T> slice_channels<T>(const Var<T>&, int64_t, int64_t);                           \
    template Var<T> repeat_batch<T>(const Var<T>&, int64_t);                                      \
    template Var<T> repeat_channels<T>(const Var<T>&, int64_t);                                   \
    template Var<T> reshape<T>(const Var<T>&, Shape);                                             \
    template Var<T> channel_norm<T>(const Var<T>&);                                               \
    template Var<T> offsets_to_grid<T>(const Var<T>&);                                            \
    template Var<T> gather_items<T>(const Var<T>&, const std::vector<int64_t>&, int64_t, int64_t, \
                                    int64_t);                                                     \
    template Tensor<T> identity_grid<T>(int64_t, int64_t, int64_t);

DMAD_INSTANTIATE_OPS(float)
DMAD_INSTANTIATE_OPS(double)

}  // namespace dmad::ops
