#pragma once

#include <cstdint>
#include <set>
#include <string>

#include "dmad/model/model.hpp"
#include "dmad/scoring/losses.hpp"
#include "dmad/scoring/scoring.hpp"
#include "json.hpp"

namespace dmad::app {

struct DataConfig {
    std::string root = "data";  // holds train/ and test/
    int64_t train_per_class = 50;
    int64_t test_per_class = 50;
    std::set<int> seen_classes{1, 3, 5, 7, 9};
    int64_t jitter = 8;
    uint64_t seed = 1;
    double contamination = 0.0;
    // Optional MNIST idx files; procedural glyphs are used when empty.
    std::string mnist_images;
    std::string mnist_labels;
};

struct OptimConfig {
    double lr = 2e-4;
    double lr_floor = 0.0;
    double weight_decay = 1e-2;
    int64_t epochs = 60;
    int64_t batch = 8;
    int64_t staleness = 3;
};

struct ScoreConfig {
    double alpha = 0.2;
    std::string kernel = "box:16";
};

struct ExperimentConfig {
    model::ModelConfig model;
    scoring::LossWeights losses;
    OptimConfig optim;
    ScoreConfig score;
    DataConfig data;
    std::string run_dir = "runs/default";

    // Ablation arms by name: "full", "no_pdm", "k1", "no_memory", "no_bg",
    // "no_strength", "no_smoothness", "gamma3=<v>".
    ExperimentConfig with_arm(const std::string& arm) const;

    void validate() const;
};

// Defaults for the PPDM pipeline: γ = (1, 1, 1) and backward heads.
ExperimentConfig ppdm_defaults();

nlohmann::json to_json(const ExperimentConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig from_json(const nlohmann::json& j);

std::string serialize(const ExperimentConfig& config);
ExperimentConfig parse(const std::string& text);

// Applies a dotted-path override such as "optim.epochs=10" or
// "model.estimator.heads=[[16,16]]"; the value is parsed as JSON, falling
// back to a plain string.
void apply_override(nlohmann::json& j, const std::string& assignment);

}  // namespace dmad::app
