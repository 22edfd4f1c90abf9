#include "dmad/scoring/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dmad::scoring {

template <typename T>
Tensor<double> squared_error_map(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank(a.shape(), 4, "error map");
    if (a.shape() != b.shape()) throw ShapeError("error map: shape mismatch");
    const int64_t n = a.dim(0), c = a.dim(1), plane = a.dim(2) * a.dim(3);
    Tensor<double> out({n, 1, a.dim(2), a.dim(3)});
    for (int64_t s = 0; s < n; ++s)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t i = 0; i < plane; ++i) {
                const double d = static_cast<double>(a[(s * c + ch) * plane + i]) - static_cast<double>(b[(s * c + ch) * plane + i]);
                out[s * plane + i] += d * d;
            }
    return out;
}

namespace {

template <typename T>
void add_magnitude(Tensor<double>& acc, const Tensor<T>& field) {
    const int64_t n = field.dim(0), plane = field.dim(2) * field.dim(3);
    for (int64_t s = 0; s < n; ++s)
        for (int64_t i = 0; i < plane; ++i) {
            const double ox = field[(s * 2) * plane + i], oy = field[(s * 2 + 1) * plane + i];
            acc[s * plane + i] += std::sqrt(ox * ox + oy * oy);
        }
}

}  // namespace

template <typename T>
Tensor<double> magnitude_map(const std::vector<Var<T>>& fields, int64_t h, int64_t w) {
    if (fields.empty()) throw std::invalid_argument("magnitude_map: no fields");
    Tensor<double> acc({fields[0].dim(0), 1, h, w});
    NoGradGuard guard;
    for (const auto& f : fields) add_magnitude(acc, deform::upsample_field(f, h, w).value());
    return acc;
}

template <typename T>
AnomalyMaps anomaly_maps(const Var<T>& x, const model::ForwardOutputs<T>& out, model::Mode expected) {
    if (out.mode != expected) {
        throw std::invalid_argument("anomaly_maps: outputs come from the " + model::mode_name(out.mode) +
                                    " pipeline, expected " + model::mode_name(expected));
    }
    NoGradGuard guard;
    AnomalyMaps maps;
    const int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const auto& pyr = out.pyramid;
    const size_t levels = pyr.levels();
    if (out.mode == model::Mode::PDM) {
        maps.a_rec = squared_error_map(x.value(), out.final_reconstruction().value());
        maps.a_rec_unaligned = maps.a_rec;
        maps.a_df = levels ? magnitude_map(pyr.forward, h, w) : Tensor<double>({n, 1, h, w});
        return maps;
    }
    maps.a_rec_unaligned = squared_error_map(out.target.value(), out.final_reconstruction().value());
    maps.a_df = Tensor<double>({n, 1, h, w});
    if (levels == 0) {
        maps.a_rec = maps.a_rec_unaligned;
        return maps;
    }
    auto err = Var<T>::constant(maps.a_rec_unaligned.cast<T>());
    maps.a_rec = deform::backward_warp(err, pyr).value().template cast<double>();

    std::vector<Var<T>> fwd, bwd;
    for (size_t k = 0; k < levels; ++k) {
        fwd.push_back(deform::upsample_field(pyr.forward[k], h, w));
        bwd.push_back(deform::upsample_field(pyr.backward[k], h, w));
    }
    for (size_t k = 0; k < levels; ++k) {
        add_magnitude(maps.a_df, deform::warp_sequence(fwd[k], {fwd.begin() + k + 1, fwd.end()}).value());
        std::vector<Var<T>> earlier(bwd.rend() - static_cast<std::ptrdiff_t>(k), bwd.rend());
        add_magnitude(maps.a_df, deform::warp_sequence(bwd[k], earlier).value());
    }
    return maps;
}

std::string SmoothingKernel::describe() const {
    return kind == Kind::Box ? "box:" + std::to_string(box_size) : "gaussian:" + std::to_string(sigma);
}

SmoothingKernel parse_kernel(const std::string& spec) {
    const auto colon = spec.find(':');
    const std::string kind = spec.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
    try {
        if (kind == "box") {
            const int64_t size = arg.empty() ? 16 : std::stoll(arg);
            if (size < 1) throw std::invalid_argument("box size must be >= 1");
            return SmoothingKernel::box(size);
        }
        if (kind == "gaussian") {
            const double sigma = arg.empty() ? 4.0 : std::stod(arg);
            if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be > 0");
            return SmoothingKernel::gaussian(sigma);
        }
    } catch (const std::logic_error& e) {
        throw std::invalid_argument("invalid smoothing kernel '" + spec + "': " + e.what());
    }
    throw std::invalid_argument("invalid smoothing kernel '" + spec + "' (expected box:<size> or gaussian:<sigma>)");
}

namespace {

// Taps with offsets first..first+size-1, summing to one.
struct Taps {
    int64_t first = 0;
    std::vector<double> weights;
};

Taps make_taps(const SmoothingKernel& k) {
    Taps t;
    if (k.kind == SmoothingKernel::Kind::Box) {
        t.first = -(k.box_size / 2);
        t.weights.assign(static_cast<size_t>(k.box_size), 1.0 / static_cast<double>(k.box_size));
        return t;
    }
    const auto radius = static_cast<int64_t>(std::ceil(3.0 * k.sigma));
    t.first = -radius;
    double total = 0.0;
    for (int64_t o = -radius; o <= radius; ++o) {
        const double v = std::exp(-0.5 * static_cast<double>(o * o) / (k.sigma * k.sigma));
        t.weights.push_back(v);
        total += v;
    }
    for (auto& v : t.weights) v /= total;
    return t;
}

}  // namespace

Tensor<double> smooth(const Tensor<double>& maps, const SmoothingKernel& kernel) {
    require_rank(maps.shape(), 4, "smooth");
    const int64_t planes = maps.dim(0) * maps.dim(1), h = maps.dim(2), w = maps.dim(3);
    const Taps taps = make_taps(kernel);
    Tensor<double> tmp(maps.shape()), out(maps.shape());
    for (int64_t p = 0; p < planes; ++p) {
        const double* src = maps.ptr() + p * h * w;
        double* mid = tmp.ptr() + p * h * w;
        double* dst = out.ptr() + p * h * w;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (size_t i = 0; i < taps.weights.size(); ++i) {
                    const int64_t xx = std::clamp<int64_t>(x + taps.first + static_cast<int64_t>(i), 0, w - 1);
                    acc += taps.weights[i] * src[y * w + xx];
                }
                mid[y * w + x] = acc;
            }
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (size_t i = 0; i < taps.weights.size(); ++i) {
                    const int64_t yy = std::clamp<int64_t>(y + taps.first + static_cast<int64_t>(i), 0, h - 1);
                    acc += taps.weights[i] * mid[yy * w + x];
                }
                dst[y * w + x] = acc;
            }
    }
    return out;
}

std::vector<ImageScore> image_scores(const AnomalyMaps& maps, double alpha, const SmoothingKernel& kernel) {
    if (maps.a_rec.shape() != maps.a_df.shape()) throw ShapeError("image_scores: map shapes differ");
    const auto rec = smooth(maps.a_rec, kernel);
    const auto df = smooth(maps.a_df, kernel);
    const int64_t n = rec.dim(0), plane = rec.dim(1) * rec.dim(2) * rec.dim(3);
    std::vector<ImageScore> scores(static_cast<size_t>(n));
    for (int64_t s = 0; s < n; ++s) {
        auto& out = scores[static_cast<size_t>(s)];
        out.rec_peak = *std::max_element(rec.ptr() + s * plane, rec.ptr() + (s + 1) * plane);
        out.df_peak = *std::max_element(df.ptr() + s * plane, df.ptr() + (s + 1) * plane);
        out.score = out.rec_peak + alpha * out.df_peak;
    }
    return scores;
}

Tensor<double> pixel_score(const AnomalyMaps& maps, double alpha) {
    if (maps.a_rec.shape() != maps.a_df.shape()) throw ShapeError("pixel_score: map shapes differ");
    Tensor<double> out(maps.a_rec.shape());
    for (size_t i = 0; i < out.size(); ++i) out[i] = maps.a_rec[i] + alpha * maps.a_df[i];
    return out;
}

#define DMAD_INSTANTIATE_SCORING(T)                                                                   \
    template Tensor<double> squared_error_map<T>(const Tensor<T>&, const Tensor<T>&);                 \
    template Tensor<double> magnitude_map<T>(const std::vector<Var<T>>&, int64_t, int64_t);           \
    template AnomalyMaps anomaly_maps<T>(const Var<T>&, const model::ForwardOutputs<T>&, model::Mode);

DMAD_INSTANTIATE_SCORING(float)
DMAD_INSTANTIATE_SCORING(double)

}  // namespace dmad::scoring
