// dmad: data generation, training, evaluation, ablations and visual exports.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dmad/app/experiment.hpp"

namespace fs = std::filesystem;
using namespace dmad;
using json = nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string run_dir;
    std::string data_root;
    std::string mode;
    int64_t epochs = -1;
    double alpha = std::nan("");
    int64_t seed = -1;
    bool express = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("-c,--config", o.config_path, "JSON experiment config");
    cmd->add_option("--set", o.overrides, "Override a config key, e.g. optim.epochs=10 (repeatable)");
    cmd->add_option("--run-dir", o.run_dir, "Run directory (overrides run_dir)");
    cmd->add_option("--data-root", o.data_root, "Dataset root (overrides data.root)");
    cmd->add_option("--mode", o.mode, "pdm or ppdm (overrides model.mode)");
    cmd->add_option("--epochs", o.epochs, "Training epochs (overrides optim.epochs)");
    cmd->add_option("--alpha", o.alpha, "Deformation weight in the image score (overrides score.alpha)");
    cmd->add_option("--seed", o.seed, "Model seed (overrides model.seed)");
    cmd->add_flag("--express", o.express, "10-epoch profile for quick checks");
}

app::ExperimentConfig resolve(const CommonOptions& o, const std::optional<json>& base = std::nullopt) {
    json j = base ? *base : json::object();
    if (!o.config_path.empty()) j = json::parse(data::read_file(o.config_path));
    if (!o.mode.empty()) app::apply_override(j, "model.mode=\"" + o.mode + "\"");
    for (const auto& s : o.overrides) app::apply_override(j, s);
    if (!o.run_dir.empty()) j["run_dir"] = o.run_dir;
    if (!o.data_root.empty()) j["data"]["root"] = o.data_root;
    if (o.express) j["optim"]["epochs"] = 10;
    if (o.epochs >= 0) j["optim"]["epochs"] = o.epochs;
    if (!std::isnan(o.alpha)) j["score"]["alpha"] = o.alpha;
    if (o.seed >= 0) j["model"]["seed"] = o.seed;
    return app::from_json(j);
}

void write_config(const app::ExperimentConfig& c) {
    data::atomic_write(fs::path(c.run_dir) / "config.json", app::serialize(c));
}

json eval_json(const app::EvalResult& r, const app::ExperimentConfig& c) {
    json j{{"auc", r.auc}, {"samples", r.rows.size()}, {"config", app::to_json(c)}};
    if (r.pixel_auc) j["pixel_auc"] = *r.pixel_auc;
    return j;
}

template <typename T>
app::EvalResult train_and_eval(const app::ExperimentConfig& c, const app::ExperimentData& d, bool quiet) {
    app::Trainer<T> trainer(c);
    write_config(c);
    trainer.train(d.train, fs::path(c.run_dir), [&](const app::EpochRecord& r) {
        if (!quiet) std::cerr << app::loss_table_row(r);
    });
    auto result = app::evaluate(trainer.model(), c, d.test);
    data::atomic_write(fs::path(c.run_dir) / "scores.tsv", app::score_table(result.rows));
    data::atomic_write(fs::path(c.run_dir) / "eval.json", eval_json(result, c).dump(2) + "\n");
    if (!result.code_histograms.empty())
        data::atomic_write(fs::path(c.run_dir) / "codes.tsv", app::code_table(result.code_histograms));
    return result;
}

template <typename T>
int run_train(const app::ExperimentConfig& c, const std::string& resume) {
    auto d = app::load_data(c);
    app::Trainer<T> trainer(c);
    if (!resume.empty()) trainer.resume(resume);
    write_config(c);
    std::cout << app::loss_table_header();
    trainer.train(d.train, fs::path(c.run_dir), [](const app::EpochRecord& r) { std::cout << app::loss_table_row(r) << std::flush; });
    std::cout << "checkpoint: " << (fs::path(c.run_dir) / "final.ckpt").string() << "\n";
    return kOk;
}

template <typename T>
int run_eval(const app::ExperimentConfig& c, const std::string& checkpoint, const std::string& out) {
    auto d = app::load_data(c);
    model::Model<T> m(c.model);
    app::load_checkpoint<T>(checkpoint, m, nullptr);
    auto result = app::evaluate(m, c, d.test);
    const fs::path table = out.empty() ? fs::path(c.run_dir) / "scores.tsv" : fs::path(out);
    data::atomic_write(table, app::score_table(result.rows));
    data::atomic_write(table.parent_path() / "eval.json", eval_json(result, c).dump(2) + "\n");
    if (!result.code_histograms.empty())
        data::atomic_write(table.parent_path() / "codes.tsv", app::code_table(result.code_histograms));
    std::cout << "auc\t" << result.auc << "\n";
    if (result.pixel_auc) std::cout << "pixel_auc\t" << *result.pixel_auc << "\n";
    std::cout << "scores: " << table.string() << "\n";
    return kOk;
}

template <typename T>
int run_ablate(const app::ExperimentConfig& base, const std::vector<std::string>& arms, bool quiet) {
    auto d = app::load_data(base);
    std::string table = "arm\tauc\tdelta_vs_full\tstatus\n";
    std::optional<double> full;
    std::vector<std::pair<std::string, std::optional<double>>> results;
    for (const auto& arm : arms) {
        try {
            const auto c = base.with_arm(arm);
            if (!quiet) std::cerr << "== arm " << arm << "\n";
            const double auc = train_and_eval<T>(c, d, quiet).auc;
            if (arm == "full") full = auc;
            results.emplace_back(arm, auc);
        } catch (const std::exception& e) {
            std::cerr << "arm " << arm << " failed: " << e.what() << "\n";
            results.emplace_back(arm, std::nullopt);
        }
    }
    char buf[256];
    for (const auto& [arm, auc] : results) {
        if (!auc) {
            table += arm + "\tnan\tnan\tfailed\n";
            continue;
        }
        const double delta = full ? *auc - *full : std::nan("");
        std::snprintf(buf, sizeof buf, "%s\t%.6f\t%+.6f\tok\n", arm.c_str(), *auc, delta);
        table += buf;
    }
    data::atomic_write(fs::path(base.run_dir) / "ablation.tsv", table);
    std::cout << table;
    return kOk;
}

data::GrayImage to_gray(const Tensor<double>& plane, int64_t h, int64_t w, double lo, double hi) {
    data::GrayImage img{h, w, std::vector<uint8_t>(static_cast<size_t>(h * w))};
    for (int64_t i = 0; i < h * w; ++i) {
        const double u = std::clamp((plane[static_cast<size_t>(i)] - lo) / (hi - lo), 0.0, 1.0);
        img.pixels[static_cast<size_t>(i)] = static_cast<uint8_t>(std::lround(255.0 * u));
    }
    return img;
}

// Arrows every `step` pixels, lengths in pixels times `gain`.
data::GrayImage quiver(const Tensor<double>& field, int64_t h, int64_t w, int64_t step = 8, double gain = 3.0) {
    data::GrayImage img{h, w, std::vector<uint8_t>(static_cast<size_t>(h * w), 0)};
    auto plot = [&](double x, double y, uint8_t v) {
        const auto xi = std::lround(x), yi = std::lround(y);
        if (xi >= 0 && xi < w && yi >= 0 && yi < h) {
            auto& p = img.pixels[static_cast<size_t>(yi * w + xi)];
            p = std::max(p, v);
        }
    };
    for (int64_t y = step / 2; y < h; y += step)
        for (int64_t x = step / 2; x < w; x += step) {
            const double dx = field[static_cast<size_t>(y * w + x)] * (w - 1) / 2.0 * gain;
            const double dy = field[static_cast<size_t>(h * w + y * w + x)] * (h - 1) / 2.0 * gain;
            const int n = static_cast<int>(std::ceil(std::hypot(dx, dy))) + 1;
            for (int i = 0; i <= n; ++i) plot(x + dx * i / n, y + dy * i / n, 160);
            plot(x + dx, y + dy, 255);
            plot(double(x), double(y), 96);
        }
    return img;
}

template <typename T>
int run_visualize(const app::ExperimentConfig& c, const std::string& checkpoint, int64_t samples, const std::string& out_dir) {
    auto d = app::load_data(c);
    model::Model<T> m(c.model);
    app::load_checkpoint<T>(checkpoint, m, nullptr);
    const fs::path dir = out_dir.empty() ? fs::path(c.run_dir) / "panels" : fs::path(out_dir);
    const int64_t h = c.model.image_h, w = c.model.image_w;
    const int64_t n = std::min<int64_t>(samples, static_cast<int64_t>(d.test.size()));
    for (int64_t i = 0; i < n; ++i) {
        auto sm = app::infer(m, d.test, {static_cast<size_t>(i)});
        const auto& o = sm.outputs;
        const auto first = [&](const Var<T>& v) {
            const auto t = v.value().template cast<double>();
            return Tensor<double>({h * w}, std::vector<double>(t.vec().begin(), t.vec().begin() + h * w));
        };
        const Var<T>& coarse = o.deformed.empty() ? o.reference : o.deformed.front();
        Tensor<double> field({2 * h * w});
        if (o.pyramid.levels() > 0) {
            NoGradGuard guard;
            field = deform::upsample_field(o.pyramid.forward.front(), h, w).value().template cast<double>().reshaped({2 * h * w});
        }
        const std::string id = d.test[static_cast<size_t>(i)].id;
        const std::vector<std::pair<std::string, data::GrayImage>> panels{
            {"input", to_gray(first(Var<T>::constant(data::stack<T>(d.test, {static_cast<size_t>(i)}))), h, w, -1, 1)},
            {"reference", to_gray(first(o.reference), h, w, -1, 1)},
            {"coarse", to_gray(first(coarse), h, w, -1, 1)},
            {"final", to_gray(first(o.final_reconstruction()), h, w, -1, 1)},
            {"mask", to_gray(first(o.mask), h, w, 0, 1)},
            {"a_rec", to_gray(sm.maps.a_rec, h, w, 0, 4)},
            {"a_df", to_gray(sm.maps.a_df, h, w, 0, 0.25)},
            {"field", quiver(field, h, w)}};
        for (const auto& [name, img] : panels) data::write_pgm(dir / (id + "_" + name + ".pgm"), img);
    }
    std::cout << "panels: " << n << " samples x 8 in " << dir.string() << "\n";
    return kOk;
}

template <typename F>
int dispatch(F&& f) {
    return app::precision_from_env() == 64 ? f(double{}) : f(float{});
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App cli{"Diversity-measurable anomaly detection toolkit"};
    cli.require_subcommand(1);

    CommonOptions gen_o, train_o, eval_o, ablate_o, vis_o;
    auto* gen = cli.add_subcommand("gen-data", "Write the train/ and test/ datasets");
    add_common(gen, gen_o);

    auto* train = cli.add_subcommand("train", "Train a model and write checkpoints and loss curves");
    add_common(train, train_o);
    std::string resume;
    train->add_option("--resume", resume, "Continue from a checkpoint");

    auto* eval = cli.add_subcommand("eval", "Score the test set and compute AUC");
    add_common(eval, eval_o);
    std::string eval_ckpt, eval_out;
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint to evaluate")->required();
    eval->add_option("-o,--out", eval_out, "Score table path (default <run_dir>/scores.tsv)");

    auto* ablate = cli.add_subcommand("ablate", "Train and evaluate ablation arms with a shared seed");
    add_common(ablate, ablate_o);
    std::vector<std::string> arms{"full", "no_pdm", "k1", "no_memory", "no_bg", "no_strength", "no_smoothness"};
    ablate->add_option("--arms", arms, "Arms: full no_pdm k1 no_memory no_bg no_strength no_smoothness gamma3=<v>")
        ->delimiter(',');
    bool quiet = false;
    ablate->add_flag("-q,--quiet", quiet, "No per-epoch progress");

    auto* vis = cli.add_subcommand("visualize", "Export per-sample panels as PGM images");
    add_common(vis, vis_o);
    std::string vis_ckpt, vis_out;
    int64_t vis_samples = 8;
    vis->add_option("--checkpoint", vis_ckpt, "Checkpoint to visualize")->required();
    vis->add_option("--samples", vis_samples, "Number of test samples");
    vis->add_option("-o,--out", vis_out, "Output directory (default <run_dir>/panels)");

    try {
        cli.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = cli.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    auto checkpoint_config = [](const std::string& path) -> std::optional<json> {
        if (path.empty() || !fs::exists(path)) return std::nullopt;
        return app::read_checkpoint(path).config;
    };

    try {
        if (*gen) {
            const auto c = resolve(gen_o);
            app::generate_data(c);
            std::cout << "datasets: " << (fs::path(c.data.root) / "train").string() << ", "
                      << (fs::path(c.data.root) / "test").string() << "\n";
            return kOk;
        }
        if (*train) {
            const auto c = resolve(train_o);
            return dispatch([&](auto t) { return run_train<decltype(t)>(c, resume); });
        }
        if (*eval) {
            if (!fs::exists(eval_ckpt)) throw data::DataError(eval_ckpt + ": checkpoint not found");
            const auto c = resolve(eval_o, eval_o.config_path.empty() ? checkpoint_config(eval_ckpt) : std::nullopt);
            return dispatch([&](auto t) { return run_eval<decltype(t)>(c, eval_ckpt, eval_out); });
        }
        if (*ablate) {
            const auto c = resolve(ablate_o);
            return dispatch([&](auto t) { return run_ablate<decltype(t)>(c, arms, quiet); });
        }
        if (*vis) {
            if (!fs::exists(vis_ckpt)) throw data::DataError(vis_ckpt + ": checkpoint not found");
            const auto c = resolve(vis_o, vis_o.config_path.empty() ? checkpoint_config(vis_ckpt) : std::nullopt);
            return dispatch([&](auto t) { return run_visualize<decltype(t)>(c, vis_ckpt, vis_samples, vis_out); });
        }
    } catch (const app::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const data::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const json::exception& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    }
    return kUsage;
}
