#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dmad/core/tensor.hpp"
#include "dmad/data/io.hpp"

namespace dmad::data {

struct LabeledImage {
    std::string id;
    Tensor<double> pixels;  // [C,H,W] in [-1, 1]
    int label = 0;
    bool anomaly = false;
    std::optional<Tensor<double>> mask;  // [1,H,W], binary
    std::string provenance = "raw";
};

using Dataset = std::vector<LabeledImage>;

// byte 0 -> -1, byte 255 -> +1
double byte_to_unit(uint8_t v);
uint8_t unit_to_byte(double v);

// Seeded digit-like glyphs: per-class stroke templates with random slant,
// scale, thickness and control-point jitter, drawn antialiased on a
// size x size grid (white on black, like MNIST).
GrayImage render_glyph(int digit, uint64_t seed, int64_t size = 28);

struct ManifestEntry {
    std::string id;
    std::string path;  // relative to the dataset root
    int label = 0;
    bool anomaly = false;
    std::string provenance = "raw";
};

// <root>/<class>/<id>.pgm (or each entry's path when set) plus
// <root>/manifest.json.
void write_dataset(const std::filesystem::path& root, const std::vector<std::pair<ManifestEntry, GrayImage>>& items);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& root);

struct CanvasOptions {
    int64_t height = 64, width = 64;
    // Maximum |offset| in pixels of the glyph centre from the canvas centre.
    int64_t jitter = 8;
    uint64_t seed = 0;
};

// Glyph centred on the canvas plus a placement offset that depends only on
// (seed, id).
Tensor<double> place_on_canvas(const GrayImage& glyph, const CanvasOptions& canvas, const std::string& id);

// Loads a dataset directory. A directory without a manifest and without
// files is an empty collection.
Dataset load_dataset(const std::filesystem::path& root, const CanvasOptions& canvas);

struct OodSplit {
    Dataset train, test_seen, test_unseen;
};

// `train` and `test` are disjoint pools. Training keeps only seen classes;
// test samples are flagged anomalous when their class is unseen.
OodSplit ood_split(const Dataset& train, const Dataset& test, const std::set<int>& seen_classes, int num_classes = 10);

struct WarpSpec {
    double translate_x = 0.0, translate_y = 0.0;  // pixels
    double rotation_deg = 0.0;
    double local_amplitude = 0.0;  // peak displacement of the local warp, pixels
    double local_scale = 16.0;     // control-grid spacing, pixels
    uint64_t seed = 0;

    bool is_identity() const {
        return translate_x == 0.0 && translate_y == 0.0 && rotation_deg == 0.0 && local_amplitude == 0.0;
    }
};

// Output pixel p samples the input at c + R(-θ)(p - t - c) + d(p), through
// the model's bilinear sampler. The result carries a mask of displaced pixels
// whose value changed, and provenance "warped(<magnitude>)".
LabeledImage synthesize_warp(const LabeledImage& image, const WarpSpec& spec);

struct Contamination {
    Dataset mixed;
    std::vector<std::string> contaminant_ids;
};

// Replaces ceil(ratio * |train|) seeded positions with seeded draws from the
// pool (without replacement).
Contamination contaminate(const Dataset& train, const Dataset& anomaly_pool, double ratio, uint64_t seed);

// Mann-Whitney AUC, ties count half. Rejects single-class input.
double compute_auc(const std::vector<std::pair<double, bool>>& scores);

// Rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

// [N,C,H,W] batch from dataset rows.
template <typename T>
Tensor<T> stack(const Dataset& data, const std::vector<size_t>& rows);

}  // namespace dmad::data
