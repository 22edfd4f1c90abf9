#include "dmad/model/model.hpp"

#include <stdexcept>

namespace dmad::model {

std::string mode_name(Mode mode) { return mode == Mode::PDM ? "pdm" : "ppdm"; }

Mode parse_mode(const std::string& name) {
    if (name == "pdm" || name == "PDM") return Mode::PDM;
    if (name == "ppdm" || name == "PPDM") return Mode::PPDM;
    throw std::invalid_argument("unknown mode '" + name + "' (expected pdm or ppdm)");
}

int64_t ModelConfig::latent_h() const { return image_h >> encoder_widths.size(); }
int64_t ModelConfig::latent_w() const { return image_w >> encoder_widths.size(); }

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
    if (channels < 1) fail("channels must be >= 1");
    if (encoder_widths.empty()) fail("encoder_widths must be nonempty");
    if (decoder_widths.size() != encoder_widths.size()) fail("decoder_widths must have one entry per encoder stage");
    for (auto w : encoder_widths)
        if (w < 1) fail("encoder widths must be positive");
    for (auto w : decoder_widths)
        if (w < 1) fail("decoder widths must be positive");
    const int64_t scale = int64_t{1} << encoder_widths.size();
    if (image_h % scale != 0 || image_w % scale != 0) {
        fail("image size must be divisible by " + std::to_string(scale));
    }
    if (latent_h() < 2 || latent_w() < 2) fail("latent must be at least 2x2");
    if (depth < 1) fail("depth must be >= 1");
    if (memory_items < 1) fail("memory_items must be >= 1");
    if (mask_width < 1) fail("mask_width must be >= 1");
    if (compressed_skip) {
        if (encoder_widths.size() < 2) fail("compressed_skip needs at least two encoder stages");
        compression::skip_channels(encoder_widths[encoder_widths.size() - 2], skip_reduction);
    }
    if (mode == Mode::PPDM && use_deformation && !estimator.backward_heads) {
        fail("ppdm mode requires backward deformation heads");
    }
    if (mode == Mode::PDM && estimator.backward_heads) fail("backward heads are only used in ppdm mode");
    if (estimator.heads.empty()) fail("at least one deformation head is required");
}

template <typename T>
Var<T> compose_fg_bg(const Var<T>& deformed, const Var<T>& mask, const Var<T>& background) {
    require_rank(deformed.shape(), 4, "compose_fg_bg");
    const int64_t n = deformed.dim(0), c = deformed.dim(1);
    Var<T> m = mask.dim(1) == c ? mask : ops::repeat_channels(mask, c);
    Var<T> bg = background.dim(0) == n ? background : ops::repeat_batch(background, n);
    if (m.shape() != deformed.shape() || bg.shape() != deformed.shape()) {
        throw ShapeError("compose_fg_bg: shapes " + shape_str(deformed.shape()) + ", " + shape_str(mask.shape()) +
                         ", " + shape_str(background.shape()) + " are incompatible");
    }
    return ops::add(ops::mul(m, deformed), ops::mul(ops::one_minus(m), bg));
}

template <typename T>
Model<T>::Model(const ModelConfig& config) : config_(config) {
    config_.estimator.in_channels = config_.channels;
    config_.estimator.image_h = config_.image_h;
    config_.estimator.image_w = config_.image_w;
    config_.estimator.backward_heads = config_.mode == Mode::PPDM;
    config_.validate();

    std::mt19937_64 rng(config_.seed);
    int64_t in = config_.channels;
    for (int64_t w : config_.encoder_widths) {
        encoder_.emplace_back(in, w, 3, 2, 1, rng);
        in = w;
    }
    to_latent_ = Conv2d<T>(in, config_.depth, 3, 1, 1, rng);
    mask_hidden_ = Conv2d<T>(in, config_.mask_width, 3, 1, 1, rng);
    mask_out_ = Conv2d<T>(config_.mask_width, 1, 3, 1, 1, rng);

    bank_.emplace(config_.memory_items, config_.depth, config_.seed + 0x9e3779b97f4a7c15ULL, config_.memory_init_std);

    in = config_.depth + 2;
    for (size_t j = 0; j < config_.decoder_widths.size(); ++j) {
        decoder_.emplace_back(in, config_.decoder_widths[j], 4, 2, 1, rng);
        in = config_.decoder_widths[j];
        if (j == 0 && config_.compressed_skip) {
            const int64_t src = config_.encoder_widths[config_.encoder_widths.size() - 2];
            const int64_t out = compression::skip_channels(src, config_.skip_reduction);
            skip_ = Conv2d<T>(src, out, 1, 1, 0, rng);
            in += out;
        }
    }
    to_image_ = Conv2d<T>(in, config_.channels, 3, 1, 1, rng);
    background_ = Var<T>::parameter(Tensor<T>({1, config_.channels, config_.image_h, config_.image_w}));
    estimator_ = deform::OffsetEstimator<T>(config_.estimator, rng);
}

template <typename T>
void Model<T>::check_input(const Var<T>& x) const {
    require_rank(x.shape(), 4, "model input");
    if (x.dim(1) != config_.channels || x.dim(2) != config_.image_h || x.dim(3) != config_.image_w) {
        throw ShapeError("model input " + shape_str(x.shape()) + " does not match configured [N," +
                         std::to_string(config_.channels) + "," + std::to_string(config_.image_h) + "," +
                         std::to_string(config_.image_w) + "]");
    }
}

template <typename T>
typename Model<T>::Encoding Model<T>::encode(const Var<T>& x) const {
    check_input(x);
    Encoding enc;
    Var<T> h = x;
    for (const auto& stage : encoder_) {
        h = ops::relu(stage(h));
        enc.stages.push_back(h);
    }
    enc.z_e = to_latent_(h);
    return enc;
}

template <typename T>
Var<T> Model<T>::decode(const Var<T>& z, const Encoding* skip_source) const {
    Var<T> h = deform::positional_embed(z);
    for (size_t j = 0; j < decoder_.size(); ++j) {
        h = ops::relu(decoder_[j](h));
        if (j == 0 && config_.compressed_skip) {
            if (!skip_source) throw std::invalid_argument("decode: compressed skip enabled but no encoder features");
            const auto& feats = skip_source->stages[skip_source->stages.size() - 2];
            h = ops::concat_channels<T>({h, compression::compressed_skip(feats, skip_.weight, skip_.bias)});
        }
    }
    return ops::tanh(to_image_(h));
}

template <typename T>
Var<T> Model<T>::mask(const Encoding& enc) const {
    if (!config_.use_background) {
        const auto& last = enc.stages.back();
        return Var<T>::constant(Tensor<T>({last.dim(0), 1, config_.image_h, config_.image_w}, T{1}));
    }
    auto logits = mask_out_(ops::relu(mask_hidden_(enc.stages.back())));
    return ops::sigmoid(ops::bilinear_upsample(logits, config_.image_h, config_.image_w));
}

template <typename T>
ForwardOutputs<T> Model<T>::forward(const Var<T>& x, bool track_usage) {
    return config_.mode == Mode::PDM ? forward_pdm(x, track_usage) : forward_ppdm(x, track_usage);
}

namespace {

template <typename T>
Var<T> compose_or_pass(const ModelConfig& cfg, const Var<T>& img, const Var<T>& mask, const Var<T>& bg) {
    return cfg.use_background ? compose_fg_bg(img, mask, bg) : img;
}

}  // namespace

template <typename T>
ForwardOutputs<T> Model<T>::forward_pdm(const Var<T>& x, bool track_usage) {
    ForwardOutputs<T> out;
    out.mode = Mode::PDM;
    out.target = x;
    out.x_fwd = x;
    auto enc = encode(x);
    out.z_e = enc.z_e;
    Var<T> decoder_input = enc.z_e;
    if (config_.use_memory) {
        out.quantized = compression::quantize(enc.z_e, *bank_, track_usage);
        decoder_input = out.quantized->straight_through;
    }
    out.reference = decode(decoder_input, &enc);
    out.mask = mask(enc);
    out.background = background_;
    if (config_.use_deformation) {
        out.pyramid = estimator_(x);
        for (size_t k = 1; k <= out.pyramid.levels(); ++k) {
            out.deformed.push_back(deform::apply_deformation(out.reference, out.pyramid, k));
            out.reconstructions.push_back(compose_or_pass(config_, out.deformed.back(), out.mask, background_));
        }
    } else {
        out.pyramid.image_h = config_.image_h;
        out.pyramid.image_w = config_.image_w;
        out.reconstructions.push_back(compose_or_pass(config_, out.reference, out.mask, background_));
    }
    return out;
}

template <typename T>
ForwardOutputs<T> Model<T>::forward_ppdm(const Var<T>& x, bool track_usage) {
    ForwardOutputs<T> out;
    out.mode = Mode::PPDM;
    check_input(x);
    if (config_.use_deformation) {
        out.pyramid = estimator_(x);
        out.x_fwd = deform::forward_warp(x, out.pyramid);
    } else {
        out.pyramid.image_h = config_.image_h;
        out.pyramid.image_w = config_.image_w;
        out.x_fwd = x;
    }
    out.target = out.x_fwd;
    auto enc = encode(out.x_fwd);
    out.z_e = enc.z_e;
    Var<T> decoder_input = enc.z_e;
    if (config_.use_memory) {
        out.quantized = compression::quantize(enc.z_e, *bank_, track_usage);
        decoder_input = out.quantized->straight_through;
    }
    out.reference = decode(decoder_input, &enc);
    out.mask = mask(enc);
    out.background = background_;
    out.reconstructions.push_back(compose_or_pass(config_, out.reference, out.mask, background_));
    return out;
}

template <typename T>
ParameterList<T> Model<T>::parameters() const {
    ParameterList<T> out;
    for (size_t i = 0; i < encoder_.size(); ++i) encoder_[i].collect(out, "encoder." + std::to_string(i));
    to_latent_.collect(out, "encoder.latent");
    if (config_.use_memory) out.push_back({"memory.items", bank_->items()});
    for (size_t j = 0; j < decoder_.size(); ++j) decoder_[j].collect(out, "decoder." + std::to_string(j));
    if (config_.compressed_skip) skip_.collect(out, "decoder.skip");
    to_image_.collect(out, "decoder.out");
    if (config_.use_background) {
        mask_hidden_.collect(out, "mask.0");
        mask_out_.collect(out, "mask.1");
        out.push_back({"background", background_});
    }
    if (config_.use_deformation) estimator_.collect(out, "deform");
    return out;
}

template Var<float> compose_fg_bg<float>(const Var<float>&, const Var<float>&, const Var<float>&);
template Var<double> compose_fg_bg<double>(const Var<double>&, const Var<double>&, const Var<double>&);
template class Model<float>;
template class Model<double>;

}  // namespace dmad::model
