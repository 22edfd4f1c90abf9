#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmad/app/checkpoint.hpp"
#include "dmad/app/config.hpp"
#include "dmad/data/dataset.hpp"

namespace dmad::app {

// Non-finite loss or parameters during training.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Writes <root>/train and <root>/test (all ten classes in each).
void generate_data(const ExperimentConfig& config);

struct ExperimentData {
    data::Dataset train;  // seen classes, possibly contaminated
    data::Dataset test;   // every class, anomaly = unseen
    std::vector<std::string> contaminant_ids;
};

ExperimentData load_data(const ExperimentConfig& config);

struct EpochRecord {
    int64_t epoch = 0;
    scoring::LossBreakdown loss;  // batch means
    double lr = 0.0;
    int64_t reseeded = 0;
};

std::string loss_table_header();
std::string loss_table_row(const EpochRecord& r);

template <typename T>
class Trainer {
public:
    explicit Trainer(const ExperimentConfig& config);

    model::Model<T>& model() { return model_; }
    const TrainingState& state() const { return state_; }
    const ExperimentConfig& config() const { return config_; }

    // One optimizer step on `batch` at learning rate `lr`.
    scoring::LossBreakdown step(const Tensor<T>& batch, double lr);

    // Seeded by (seed, epoch), so a resumed run replays the same batches.
    EpochRecord run_epoch(const data::Dataset& train);

    // Trains to config.optim.epochs. With a run directory, appends to
    // loss_curve.tsv and writes last.ckpt each epoch, best.ckpt on a new
    // lowest mean loss, and final.ckpt at the end.
    std::vector<EpochRecord> train(const data::Dataset& train, const std::optional<std::filesystem::path>& run_dir,
                                   const std::function<void(const EpochRecord&)>& on_epoch = {});

    void save(const std::filesystem::path& path) const;
    void resume(const std::filesystem::path& path);

    int64_t steps_per_epoch(size_t samples) const;

private:
    ExperimentConfig config_;
    model::Model<T> model_;
    AdamW<T> optimizer_;
    TrainingState state_;
    Tensor<T> last_queries_;
};

struct ScoreRow {
    std::string id;
    int label = 0;
    bool anomaly = false;
    double score = 0.0;
    double rec_peak = 0.0;
    double df_peak = 0.0;
};

struct EvalResult {
    double auc = 0.0;
    std::optional<double> pixel_auc;
    std::vector<ScoreRow> rows;
    // Memory item counts over all latent positions, per class label (empty
    // without the memory).
    std::map<int, std::vector<int64_t>> code_histograms;
};

template <typename T>
struct SampleMaps {
    scoring::AnomalyMaps maps;
    model::ForwardOutputs<T> outputs;
};

// Inference on rows [begin, end) of `data` (no graph, no usage tracking).
template <typename T>
SampleMaps<T> infer(model::Model<T>& model, const data::Dataset& data, const std::vector<size_t>& rows);

template <typename T>
EvalResult evaluate(model::Model<T>& model, const ExperimentConfig& config, const data::Dataset& test,
                    int64_t batch = 16);

std::string score_table(const std::vector<ScoreRow>& rows);
// label, per-item counts, share of the dominant item.
std::string code_table(const std::map<int, std::vector<int64_t>>& histograms);
double dominant_share(const std::vector<int64_t>& counts);
// AUC recomputed from a score table's rows.
double auc_of(const std::vector<ScoreRow>& rows);

// "32" or "64" from DMAD_PRECISION; 32 when unset.
int precision_from_env();

}  // namespace dmad::app
