#pragma once

// Checkpoint layout:
//   line 1: "DMAD-CHECKPOINT"
//   line 2: byte length L of the header
//   next L bytes: JSON header {format_version, config, tensors: [{name, shape,
//   offset, count}], state}
//   then raw little-endian float32 blocks; offsets count from the first
//   byte after the header.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dmad/app/config.hpp"
#include "dmad/core/optim.hpp"

namespace dmad::app {

inline constexpr int kCheckpointVersion = 1;

struct TrainingState {
    int64_t epoch = 0;  // completed epochs
    int64_t step = 0;   // completed optimizer steps
    double best_loss = 0.0;
    bool has_best = false;
    std::vector<int64_t> bank_usage, bank_idle;
};

struct CheckpointData {
    nlohmann::json config;
    TrainingState state;
    nlohmann::json optimizer_steps;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& config, const model::Model<T>& model,
                     const AdamW<T>* optimizer, const TrainingState& state);

CheckpointData read_checkpoint(const std::filesystem::path& path);

// Restores parameters (and optimizer / bank state when given). Rejects a
// checkpoint whose model geometry differs from the model's.
template <typename T>
TrainingState load_checkpoint(const std::filesystem::path& path, model::Model<T>& model, AdamW<T>* optimizer);

}  // namespace dmad::app
