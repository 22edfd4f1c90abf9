#include "dmad/deform/deformation.hpp"

#include <stdexcept>
#include <string>

namespace dmad::deform {

template <typename T>
Tensor<T> positional_grid(int64_t n, int64_t h, int64_t w) {
    if (h < 2 || w < 2) throw ShapeError("positional grid needs H, W >= 2, got " + shape_str({h, w}));
    Tensor<T> grid({n, 2, h, w});
    for (int64_t b = 0; b < n; ++b)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                grid.at(b, 0, y, x) = static_cast<T>(-1.0 + 2.0 * static_cast<double>(x) / static_cast<double>(w - 1));
                grid.at(b, 1, y, x) = static_cast<T>(-1.0 + 2.0 * static_cast<double>(y) / static_cast<double>(h - 1));
            }
    return grid;
}

template <typename T>
Var<T> positional_embed(const Var<T>& input) {
    require_rank(input.shape(), 4, "positional_embed");
    auto coords = Var<T>::constant(positional_grid<T>(input.dim(0), input.dim(2), input.dim(3)));
    return ops::concat_channels<T>({input, coords});
}

namespace {

int64_t strided_extent(int64_t extent) { return (extent - 1) / 2 + 1; }

}  // namespace

template <typename T>
OffsetEstimator<T>::OffsetEstimator(const EstimatorOptions& options, std::mt19937_64& rng) : options_(options) {
    if (options.heads.empty()) throw std::invalid_argument("deformation estimator needs at least one head");
    if (options.trunk_blocks < 0 || options.trunk_width < 1) {
        throw std::invalid_argument("deformation estimator: invalid trunk configuration");
    }
    std::vector<Resolution> levels{{options.image_h, options.image_w}};
    for (int64_t b = 0; b < options.trunk_blocks; ++b) {
        const auto& last = levels.back();
        levels.push_back({strided_extent(last.h), strided_extent(last.w)});
    }
    for (size_t k = 0; k < options.heads.size(); ++k) {
        const auto& r = options.heads[k];
        if (r.h < 2 || r.w < 2) throw std::invalid_argument("deformation head resolution must be at least 2x2");
        if (k > 0 && (r.h < options.heads[k - 1].h || r.w < options.heads[k - 1].w)) {
            throw std::invalid_argument("deformation head resolutions must be nondecreasing (coarse to fine)");
        }
        int64_t level = -1;
        for (size_t l = 0; l < levels.size(); ++l)
            if (levels[l] == r) level = static_cast<int64_t>(l);
        if (level < 1) {
            throw std::invalid_argument("deformation head " + std::to_string(k + 1) + " resolution " +
                                        shape_str({r.h, r.w}) + " matches no trunk level");
        }
        head_level_.push_back(level);
    }
    int64_t channels = options.in_channels + 2;
    for (int64_t b = 0; b < options.trunk_blocks; ++b) {
        trunk_.emplace_back(channels, options.trunk_width, 3, 2, 1, rng);
        channels = options.trunk_width;
    }
    for (size_t k = 0; k < options.heads.size(); ++k)
        forward_heads_.emplace_back(channels, 2, 3, 1, 1, rng, options.head_init_gain);
    if (options.backward_heads) {
        for (size_t k = 0; k < options.heads.size(); ++k)
            backward_heads_.emplace_back(channels, 2, 3, 1, 1, rng, options.head_init_gain);
    }
}

template <typename T>
DeformationPyramid<T> OffsetEstimator<T>::operator()(const Var<T>& x) const {
    require_rank(x.shape(), 4, "deformation estimator input");
    if (x.dim(1) != options_.in_channels || x.dim(2) != options_.image_h || x.dim(3) != options_.image_w) {
        throw ShapeError("deformation estimator: expected [N," + std::to_string(options_.in_channels) + "," +
                         std::to_string(options_.image_h) + "," + std::to_string(options_.image_w) + "], got " +
                         shape_str(x.shape()));
    }
    std::vector<Var<T>> features{positional_embed(x)};
    for (const auto& block : trunk_) features.push_back(ops::relu(block(features.back())));

    DeformationPyramid<T> pyramid;
    pyramid.head_resolutions = options_.heads;
    pyramid.image_h = options_.image_h;
    pyramid.image_w = options_.image_w;
    auto offsets = [&](const Conv2d<T>& head, int64_t level) {
        return ops::clip_unit(ops::tanh(head(features[static_cast<size_t>(level)])));
    };
    for (size_t k = 0; k < forward_heads_.size(); ++k) pyramid.forward.push_back(offsets(forward_heads_[k], head_level_[k]));
    for (size_t k = 0; k < backward_heads_.size(); ++k)
        pyramid.backward.push_back(offsets(backward_heads_[k], head_level_[k]));
    return pyramid;
}

template <typename T>
void OffsetEstimator<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
    for (size_t b = 0; b < trunk_.size(); ++b) trunk_[b].collect(out, prefix + ".trunk" + std::to_string(b));
    for (size_t k = 0; k < forward_heads_.size(); ++k)
        forward_heads_[k].collect(out, prefix + ".head" + std::to_string(k));
    for (size_t k = 0; k < backward_heads_.size(); ++k)
        backward_heads_[k].collect(out, prefix + ".back_head" + std::to_string(k));
}

template <typename T>
Var<T> upsample_field(const Var<T>& field, int64_t image_h, int64_t image_w) {
    require_rank(field.shape(), 4, "offset field");
    if (field.dim(1) != 2) throw ShapeError("offset field must have 2 channels, got " + shape_str(field.shape()));
    return ops::bilinear_upsample(field, image_h, image_w);
}

template <typename T>
Var<T> warp_sequence(const Var<T>& image, const std::vector<Var<T>>& full_res_fields) {
    Var<T> out = image;
    for (const auto& field : full_res_fields) out = ops::grid_sample(out, ops::offsets_to_grid(field));
    return out;
}

namespace {

template <typename T>
std::vector<Var<T>> upsampled(const std::vector<Var<T>>& fields, size_t count, int64_t h, int64_t w) {
    std::vector<Var<T>> out;
    for (size_t k = 0; k < count; ++k) out.push_back(upsample_field(fields[k], h, w));
    return out;
}

template <typename T>
void check_image(const Var<T>& image, const DeformationPyramid<T>& pyramid, const char* what) {
    require_rank(image.shape(), 4, what);
    if (image.dim(2) != pyramid.image_h || image.dim(3) != pyramid.image_w) {
        throw ShapeError(std::string(what) + ": image " + shape_str(image.shape()) + " does not match pyramid " +
                         shape_str({pyramid.image_h, pyramid.image_w}));
    }
}

}  // namespace

template <typename T>
Var<T> apply_deformation(const Var<T>& reference, const DeformationPyramid<T>& pyramid, size_t upto) {
    if (upto < 1 || upto > pyramid.levels()) {
        throw std::out_of_range("apply_deformation: level " + std::to_string(upto) + " outside 1.." +
                                std::to_string(pyramid.levels()));
    }
    check_image(reference, pyramid, "apply_deformation");
    return warp_sequence(reference, upsampled(pyramid.forward, upto, pyramid.image_h, pyramid.image_w));
}

template <typename T>
Var<T> forward_warp(const Var<T>& x, const DeformationPyramid<T>& pyramid) {
    return apply_deformation(x, pyramid, pyramid.levels());
}

template <typename T>
Var<T> backward_warp(const Var<T>& image, const DeformationPyramid<T>& pyramid) {
    if (!pyramid.has_backward()) throw std::invalid_argument("backward_warp: pyramid has no backward fields");
    check_image(image, pyramid, "backward_warp");
    auto fields = upsampled(pyramid.backward, pyramid.backward.size(), pyramid.image_h, pyramid.image_w);
    return warp_sequence(image, std::vector<Var<T>>(fields.rbegin(), fields.rend()));
}

template <typename T>
DeformationLossTerms<T> field_regularizer(const std::vector<Var<T>>& fields, const DeformationLossWeights& weights) {
    DeformationLossTerms<T> terms;
    terms.smoothness = Var<T>::constant(Tensor<T>::scalar(T{0}));
    terms.strength = Var<T>::constant(Tensor<T>::scalar(T{0}));
    for (const auto& field : fields) {
        require_rank(field.shape(), 4, "offset field");
        const auto positions = static_cast<T>(field.dim(0) * field.dim(2) * field.dim(3));
        auto [dx, dy] = ops::spatial_gradient(field);
        auto jacobian_l1 = ops::add(ops::sum(ops::abs(dx)), ops::sum(ops::abs(dy)));
        terms.smoothness = ops::add(terms.smoothness, ops::scale(jacobian_l1, T{1} / positions));
        terms.strength = ops::add(terms.strength, ops::mean(ops::channel_norm(field)));
    }
    terms.total = ops::add(ops::scale(terms.smoothness, static_cast<T>(weights.smoothness)),
                           ops::scale(terms.strength, static_cast<T>(weights.strength)));
    return terms;
}

template <typename T>
Var<T> deformation_loss(const DeformationPyramid<T>& pyramid, const DeformationLossWeights& weights) {
    return field_regularizer(pyramid.forward, weights).total;
}

template <typename T>
Var<T> deformation_loss_plus(const DeformationPyramid<T>& pyramid, const DeformationLossWeights& weights) {
    if (!pyramid.has_backward()) throw std::invalid_argument("deformation_loss_plus: pyramid has no backward fields");
    return ops::add(field_regularizer(pyramid.forward, weights).total,
                    field_regularizer(pyramid.backward, weights).total);
}

template <typename T>
Var<T> cycle_loss(const Var<T>& x, const DeformationPyramid<T>& pyramid) {
    if (!pyramid.has_backward()) throw std::invalid_argument("cycle_loss: pyramid has no backward fields");
    return ops::mse(x, backward_warp(forward_warp(x, pyramid), pyramid));
}

#define DMAD_INSTANTIATE_DEFORM(T)                                                                              \
    template Tensor<T> positional_grid<T>(int64_t, int64_t, int64_t);                                           \
    template Var<T> positional_embed<T>(const Var<T>&);                                                         \
    template class OffsetEstimator<T>;                                                                          \
    template Var<T> upsample_field<T>(const Var<T>&, int64_t, int64_t);                                         \
    template Var<T> warp_sequence<T>(const Var<T>&, const std::vector<Var<T>>&);                                \
    template Var<T> apply_deformation<T>(const Var<T>&, const DeformationPyramid<T>&, size_t);                  \
    template Var<T> forward_warp<T>(const Var<T>&, const DeformationPyramid<T>&);                               \
    template Var<T> backward_warp<T>(const Var<T>&, const DeformationPyramid<T>&);                              \
    template DeformationLossTerms<T> field_regularizer<T>(const std::vector<Var<T>>&,                           \
                                                          const DeformationLossWeights&);                       \
    template Var<T> deformation_loss<T>(const DeformationPyramid<T>&, const DeformationLossWeights&);           \
    template Var<T> deformation_loss_plus<T>(const DeformationPyramid<T>&, const DeformationLossWeights&);      \
    template Var<T> cycle_loss<T>(const Var<T>&, const DeformationPyramid<T>&);

DMAD_INSTANTIATE_DEFORM(float)
DMAD_INSTANTIATE_DEFORM(double)

}  // namespace dmad::deform
