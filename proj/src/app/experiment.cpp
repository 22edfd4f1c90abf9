#include "dmad/app/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>

namespace dmad::app {

namespace fs = std::filesystem;

namespace {

uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

uint64_t hash_id(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
    return h;
}

std::string sample_id(const std::string& split, int label, int64_t index) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s-%d-%05lld", split.c_str(), label, static_cast<long long>(index));
    return buf;
}

data::CanvasOptions canvas_of(const ExperimentConfig& c) {
    return {c.model.image_h, c.model.image_w, c.data.jitter, c.data.seed};
}

}  // namespace

void generate_data(const ExperimentConfig& config) {
    const fs::path root = config.data.root;
    const bool mnist = !config.data.mnist_images.empty();
    std::vector<data::GrayImage> images;
    std::vector<uint8_t> labels;
    if (mnist) {
        images = data::read_idx_images(config.data.mnist_images);
        labels = data::read_idx_labels(config.data.mnist_labels);
        if (images.size() != labels.size()) throw data::DataError("mnist image and label counts differ");
    }
    // Per-class read position, so test draws continue after the training draws.
    std::vector<size_t> cursor(10, 0);
    for (const std::string split : {"train", "test"}) {
        const int64_t per_class = split == "train" ? config.data.train_per_class : config.data.test_per_class;
        std::vector<std::pair<data::ManifestEntry, data::GrayImage>> items;
        for (int label = 0; label < 10; ++label) {
            for (int64_t i = 0; i < per_class; ++i) {
                data::ManifestEntry e;
                e.id = sample_id(split, label, i);
                e.label = label;
                e.path = std::to_string(label) + "/" + e.id + ".pgm";
                data::GrayImage img;
                if (mnist) {
                    auto& at = cursor[static_cast<size_t>(label)];
                    while (at < labels.size() && labels[at] != label) ++at;
                    if (at >= labels.size()) {
                        throw data::DataError("mnist files hold too few samples of class " + std::to_string(label));
                    }
                    img = images[at++];
                } else {
                    img = data::render_glyph(label, mix(config.data.seed, hash_id(e.id)));
                }
                items.emplace_back(std::move(e), std::move(img));
            }
        }
        data::write_dataset(root / split, items);
    }
}

ExperimentData load_data(const ExperimentConfig& config) {
    const fs::path root = config.data.root;
    const auto canvas = canvas_of(config);
    auto pool = data::load_dataset(root / "train", canvas);
    auto test = data::load_dataset(root / "test", canvas);
    auto split = data::ood_split(pool, test, config.data.seen_classes);
    ExperimentData out;
    out.test = std::move(split.test_seen);
    out.test.insert(out.test.end(), split.test_unseen.begin(), split.test_unseen.end());
    std::sort(out.test.begin(), out.test.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    if (config.data.contamination > 0.0) {
        data::Dataset anomalies;
        for (const auto& s : pool)
            if (!config.data.seen_classes.count(s.label)) {
                auto a = s;
                a.anomaly = true;
                anomalies.push_back(std::move(a));
            }
        auto mixed = data::contaminate(split.train, anomalies, config.data.contamination, mix(config.data.seed, 7));
        out.train = std::move(mixed.mixed);
        out.contaminant_ids = std::move(mixed.contaminant_ids);
    } else {
        out.train = std::move(split.train);
    }
    return out;
}

std::string loss_table_header() { return "epoch\tlr\trec\tcom\tdf\tcyc\ttotal\treseeded\n"; }

std::string loss_table_row(const EpochRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%lld\n", static_cast<long long>(r.epoch),
                  r.lr, r.loss.rec, r.loss.com, r.loss.df, r.loss.cyc, r.loss.total, static_cast<long long>(r.reseeded));
    return buf;
}

template <typename T>
Trainer<T>::Trainer(const ExperimentConfig& config)
    : config_(config),
      model_(config.model),
      optimizer_(AdamWOptions{config.optim.lr, 0.9, 0.999, 1e-8, config.optim.weight_decay}) {}

template <typename T>
int64_t Trainer<T>::steps_per_epoch(size_t samples) const {
    return (static_cast<int64_t>(samples) + config_.optim.batch - 1) / config_.optim.batch;
}

template <typename T>
scoring::LossBreakdown Trainer<T>::step(const Tensor<T>& batch, double lr) {
    auto params = model_.parameters();
    zero_grads(params);
    auto x = Var<T>::constant(batch);
    auto out = model_.forward(x, true);
    auto terms = scoring::compute_losses(x, out, config_.losses);
    if (const auto bad = terms.breakdown.first_non_finite(); !bad.empty()) {
        throw NumericError("non-finite " + bad + " loss at step " + std::to_string(state_.step));
    }
    backward(terms.total);
    optimizer_.step(params, lr);
    if (out.quantized) last_queries_ = compression::query_rows(out.z_e.value());
    ++state_.step;
    return terms.breakdown;
}

template <typename T>
EpochRecord Trainer<T>::run_epoch(const data::Dataset& train) {
    if (train.empty()) throw std::invalid_argument("training set is empty");
    const int64_t epoch = state_.epoch;
    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::mt19937_64 rng(mix(config_.model.seed, static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    const int64_t per_epoch = steps_per_epoch(train.size());
    const int64_t horizon = per_epoch * std::max<int64_t>(config_.optim.epochs, 1);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = cosine_lr(config_.optim.lr, state_.step, horizon, config_.optim.lr_floor);
    int64_t count = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config_.optim.batch)) {
        const size_t end = std::min(order.size(), start + static_cast<size_t>(config_.optim.batch));
        std::vector<size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() + static_cast<std::ptrdiff_t>(end));
        const double lr = cosine_lr(config_.optim.lr, state_.step, horizon, config_.optim.lr_floor);
        const auto b = step(data::stack<T>(train, rows), lr);
        rec.loss.rec += b.rec;
        rec.loss.com += b.com;
        rec.loss.df += b.df;
        rec.loss.cyc += b.cyc;
        rec.loss.total += b.total;
        rec.loss.has_cyc = b.has_cyc;
        ++count;
    }
    for (double* v : {&rec.loss.rec, &rec.loss.com, &rec.loss.df, &rec.loss.cyc, &rec.loss.total}) *v /= double(count);
    if (config_.model.use_memory && last_queries_.size() > 0) {
        std::mt19937_64 reseed_rng(mix(config_.model.seed ^ 0x5eedULL, static_cast<uint64_t>(epoch)));
        rec.reseeded = compression::reseed_dead_items(model_.bank(), last_queries_, config_.optim.staleness, reseed_rng);
    }
    for (const auto& p : model_.parameters())
        for (T v : p.var.value().vec())
            if (!std::isfinite(v)) throw NumericError("non-finite value in parameter " + p.name);
    ++state_.epoch;
    return rec;
}

template <typename T>
std::vector<EpochRecord> Trainer<T>::train(const data::Dataset& train, const std::optional<fs::path>& run_dir,
                                           const std::function<void(const EpochRecord&)>& on_epoch) {
    std::vector<EpochRecord> records;
    std::string curve;
    if (run_dir) {
        fs::create_directories(*run_dir);
        const fs::path p = *run_dir / "loss_curve.tsv";
        curve = state_.epoch > 0 && fs::exists(p) ? data::read_file(p) : loss_table_header();
    }
    while (state_.epoch < config_.optim.epochs) {
        auto rec = run_epoch(train);
        records.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (!run_dir) continue;
        curve += loss_table_row(rec);
        data::atomic_write(*run_dir / "loss_curve.tsv", curve);
        if (!state_.has_best || rec.loss.total < state_.best_loss) {
            state_.has_best = true;
            state_.best_loss = rec.loss.total;
            save(*run_dir / "best.ckpt");
        }
        save(*run_dir / "last.ckpt");
    }
    if (run_dir) save(*run_dir / "final.ckpt");
    return records;
}

template <typename T>
void Trainer<T>::save(const fs::path& path) const {
    save_checkpoint(path, config_, model_, &optimizer_, state_);
}

template <typename T>
void Trainer<T>::resume(const fs::path& path) {
    state_ = load_checkpoint(path, model_, &optimizer_);
}

template <typename T>
SampleMaps<T> infer(model::Model<T>& model, const data::Dataset& data, const std::vector<size_t>& rows) {
    NoGradGuard guard;
    auto x = Var<T>::constant(data::stack<T>(data, rows));
    SampleMaps<T> out;
    out.outputs = model.forward(x, false);
    out.maps = scoring::anomaly_maps(x, out.outputs, model.config().mode);
    return out;
}

template <typename T>
EvalResult evaluate(model::Model<T>& model, const ExperimentConfig& config, const data::Dataset& test, int64_t batch) {
    EvalResult result;
    const auto kernel = scoring::parse_kernel(config.score.kernel);
    std::vector<std::pair<double, bool>> pixels;
    for (size_t start = 0; start < test.size(); start += static_cast<size_t>(batch)) {
        std::vector<size_t> rows;
        for (size_t i = start; i < std::min(test.size(), start + static_cast<size_t>(batch)); ++i) rows.push_back(i);
        auto sm = infer(model, test, rows);
        const auto scores = scoring::image_scores(sm.maps, config.score.alpha, kernel);
        const auto pix = scoring::pixel_score(sm.maps, config.score.alpha);
        const size_t plane = static_cast<size_t>(pix.dim(2) * pix.dim(3));
        if (const auto& q = sm.outputs.quantized) {
            const size_t per = static_cast<size_t>(q->height * q->width);
            for (size_t r = 0; r < rows.size(); ++r) {
                auto& h = result.code_histograms[test[rows[r]].label];
                h.resize(static_cast<size_t>(model.bank().size()), 0);
                for (size_t i = 0; i < per; ++i) ++h[static_cast<size_t>(q->codes[r * per + i])];
            }
        }
        for (size_t r = 0; r < rows.size(); ++r) {
            const auto& s = test[rows[r]];
            result.rows.push_back({s.id, s.label, s.anomaly, scores[r].score, scores[r].rec_peak, scores[r].df_peak});
            if (s.mask) {
                for (size_t i = 0; i < plane; ++i) pixels.emplace_back(pix[r * plane + i], (*s.mask)[i] > 0.5);
            }
        }
    }
    result.auc = auc_of(result.rows);
    bool pos = false, neg = false;
    for (const auto& [v, f] : pixels) (f ? pos : neg) = true;
    if (pos && neg) result.pixel_auc = data::compute_auc(pixels);
    return result;
}

double auc_of(const std::vector<ScoreRow>& rows) {
    std::vector<std::pair<double, bool>> s;
    for (const auto& r : rows) s.emplace_back(r.score, r.anomaly);
    return data::compute_auc(s);
}

std::string score_table(const std::vector<ScoreRow>& rows) {
    std::string out = "id\tlabel\tanomaly\tscore\trec_peak\tdf_peak\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s\t%d\t%d\t%.17g\t%.17g\t%.17g\n", r.id.c_str(), r.label, r.anomaly ? 1 : 0,
                      r.score, r.rec_peak, r.df_peak);
        out += buf;
    }
    return out;
}

double dominant_share(const std::vector<int64_t>& counts) {
    int64_t total = 0, top = 0;
    for (auto c : counts) {
        total += c;
        top = std::max(top, c);
    }
    return total ? double(top) / double(total) : 0.0;
}

std::string code_table(const std::map<int, std::vector<int64_t>>& histograms) {
    std::string out = "label";
    const size_t items = histograms.empty() ? 0 : histograms.begin()->second.size();
    for (size_t i = 0; i < items; ++i) out += "\titem" + std::to_string(i);
    out += "\tdominant_share\n";
    char buf[64];
    for (const auto& [label, counts] : histograms) {
        out += std::to_string(label);
        for (auto c : counts) out += "\t" + std::to_string(c);
        std::snprintf(buf, sizeof buf, "\t%.6f\n", dominant_share(counts));
        out += buf;
    }
    return out;
}

int precision_from_env() {
    const char* v = std::getenv("DMAD_PRECISION");
    if (!v || !*v) return 32;
    const std::string s = v;
    if (s == "32" || s == "f32" || s == "float") return 32;
    if (s == "64" || s == "f64" || s == "double") return 64;
    throw std::invalid_argument("DMAD_PRECISION must be 32 or 64, got '" + s + "'");
}

template class Trainer<float>;
template class Trainer<double>;
template SampleMaps<float> infer<float>(model::Model<float>&, const data::Dataset&, const std::vector<size_t>&);
template SampleMaps<double> infer<double>(model::Model<double>&, const data::Dataset&, const std::vector<size_t>&);
template EvalResult evaluate<float>(model::Model<float>&, const ExperimentConfig&, const data::Dataset&, int64_t);
template EvalResult evaluate<double>(model::Model<double>&, const ExperimentConfig&, const data::Dataset&, int64_t);

}  // namespace dmad::app
