#pragma once

// Encoder f, memory bank, decoder g over PE(z_q), mask head f_m, background
// template x_bg and the deformation estimator, wired into the two pipelines:
//   PDM:  x̂_k = m ⊙ (g(PE(q(f(x)))) ∘ O_1 ∘ … ∘ O_k) + (1 - m) ⊙ x_bg
//   PPDM: x_fwd = x ∘ O_1 ∘ … ∘ O_K,  x̂ = m ⊙ g(PE(q(f(x_fwd)))) + (1 - m) ⊙ x_bg

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dmad/compression/memory.hpp"
#include "dmad/core/layers.hpp"
#include "dmad/deform/deformation.hpp"

namespace dmad::model {

enum class Mode { PDM, PPDM };

std::string mode_name(Mode mode);
Mode parse_mode(const std::string& name);

struct ModelConfig {
    Mode mode = Mode::PDM;
    int64_t channels = 1;
    int64_t image_h = 64, image_w = 64;
    // One stride-2 3x3 convolution per entry; the latent is image / 2^size.
    std::vector<int64_t> encoder_widths{32, 64};
    // One stride-2 transposed convolution per entry, mirroring the encoder.
    std::vector<int64_t> decoder_widths{32, 16};
    int64_t depth = 16;        // D
    int64_t memory_items = 10;  // N
    double memory_init_std = 0.1;
    int64_t mask_width = 8;
    bool compressed_skip = false;
    int64_t skip_reduction = 16;
    deform::EstimatorOptions estimator;

    // Ablation switches.
    bool use_memory = true;
    bool use_deformation = true;
    bool use_background = true;

    uint64_t seed = 0;

    int64_t latent_h() const;
    int64_t latent_w() const;
    int64_t levels() const { return use_deformation ? static_cast<int64_t>(estimator.heads.size()) : 0; }

    // Throws std::invalid_argument naming the first inconsistent field.
    void validate() const;
};

template <typename T>
struct ForwardOutputs {
    Mode mode = Mode::PDM;
    // Image the reconstructions are compared with: x (PDM) or x_fwd (PPDM).
    Var<T> target;
    Var<T> x_fwd;
    Var<T> z_e;
    std::optional<compression::QuantizedEmbedding<T>> quantized;
    Var<T> reference;
    deform::DeformationPyramid<T> pyramid;
    // x̃_k after the first k fields (PDM); empty otherwise.
    std::vector<Var<T>> deformed;
    // x̂_1..x̂_K (PDM), or the single reconstruction of x_fwd (PPDM, no PDM).
    std::vector<Var<T>> reconstructions;
    Var<T> mask;
    Var<T> background;

    const Var<T>& final_reconstruction() const { return reconstructions.back(); }
};

// m ⊙ x̃ + (1 - m) ⊙ x_bg. A single-channel mask is broadcast over channels
// and a batch-1 background over the batch.
template <typename T>
Var<T> compose_fg_bg(const Var<T>& deformed, const Var<T>& mask, const Var<T>& background);

template <typename T>
class Model {
public:
    explicit Model(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }

    struct Encoding {
        std::vector<Var<T>> stages;  // post-activation output of each stride-2 stage
        Var<T> z_e;
    };
    Encoding encode(const Var<T>& x) const;
    // g(PE(z)) with the optional skip from the next-to-last encoder stage.
    Var<T> decode(const Var<T>& z, const Encoding* skip_source = nullptr) const;
    // Sigmoid mask at image resolution from the last encoder stage.
    Var<T> mask(const Encoding& enc) const;

    // track_usage increments the bank's usage counts (training only).
    ForwardOutputs<T> forward(const Var<T>& x, bool track_usage = false);
    ForwardOutputs<T> forward_pdm(const Var<T>& x, bool track_usage = false);
    ForwardOutputs<T> forward_ppdm(const Var<T>& x, bool track_usage = false);

    // Every learnable tensor with a stable dotted name.
    ParameterList<T> parameters() const;

    compression::MemoryBank<T>& bank() { return *bank_; }
    const compression::MemoryBank<T>& bank() const { return *bank_; }
    deform::OffsetEstimator<T>& estimator() { return estimator_; }
    Var<T>& background() { return background_; }

private:
    void check_input(const Var<T>& x) const;

    ModelConfig config_;
    std::vector<Conv2d<T>> encoder_;
    Conv2d<T> to_latent_;
    std::optional<compression::MemoryBank<T>> bank_;
    std::vector<ConvTranspose2d<T>> decoder_;
    Conv2d<T> skip_;
    Conv2d<T> to_image_;
    Conv2d<T> mask_hidden_;
    Conv2d<T> mask_out_;
    Var<T> background_;
    deform::OffsetEstimator<T> estimator_;
};

}  // namespace dmad::model
