#include "dmad/app/config.hpp"

#include <stdexcept>

namespace dmad::app {

using json = nlohmann::json;

namespace {

json heads_to_json(const std::vector<deform::Resolution>& heads) {
    json out = json::array();
    for (const auto& r : heads) out.push_back({r.h, r.w});
    return out;
}

std::vector<deform::Resolution> heads_from_json(const json& j) {
    std::vector<deform::Resolution> out;
    for (const auto& r : j) {
        if (!r.is_array() || r.size() != 2) throw std::invalid_argument("config: heads entries must be [h, w]");
        out.push_back({r[0].get<int64_t>(), r[1].get<int64_t>()});
    }
    return out;
}

// Rejects keys of `given` that `reference` lacks, recursing into objects.
void check_keys(const json& given, const json& reference, const std::string& path) {
    if (!given.is_object()) return;
    for (auto it = given.begin(); it != given.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!reference.contains(it.key())) throw std::invalid_argument("config: unknown key '" + key + "'");
        if (reference.at(it.key()).is_object()) {
            if (!it.value().is_object()) throw std::invalid_argument("config: '" + key + "' must be an object");
            check_keys(it.value(), reference.at(it.key()), key);
        }
    }
}

}  // namespace

json to_json(const ExperimentConfig& c) {
    const auto& m = c.model;
    const auto& e = m.estimator;
    json j;
    j["model"] = {{"mode", model::mode_name(m.mode)},
                  {"channels", m.channels},
                  {"image_h", m.image_h},
                  {"image_w", m.image_w},
                  {"encoder_widths", m.encoder_widths},
                  {"decoder_widths", m.decoder_widths},
                  {"depth", m.depth},
                  {"memory_items", m.memory_items},
                  {"memory_init_std", m.memory_init_std},
                  {"mask_width", m.mask_width},
                  {"compressed_skip", m.compressed_skip},
                  {"skip_reduction", m.skip_reduction},
                  {"use_memory", m.use_memory},
                  {"use_deformation", m.use_deformation},
                  {"use_background", m.use_background},
                  {"seed", m.seed},
                  {"estimator",
                   {{"trunk_blocks", e.trunk_blocks},
                    {"trunk_width", e.trunk_width},
                    {"heads", heads_to_json(e.heads)},
                    {"head_init_gain", e.head_init_gain}}}};
    const auto& l = c.losses;
    j["losses"] = {{"beta", l.beta},
                   {"gamma1", l.gamma1},
                   {"gamma2", l.gamma2},
                   {"gamma3", l.gamma3},
                   {"lambda_grad", l.lambda_grad},
                   {"smoothness_weight", l.deformation.smoothness},
                   {"strength_weight", l.deformation.strength}};
    const auto& o = c.optim;
    j["optim"] = {{"lr", o.lr},         {"lr_floor", o.lr_floor}, {"weight_decay", o.weight_decay},
                  {"epochs", o.epochs}, {"batch", o.batch},       {"staleness", o.staleness}};
    j["score"] = {{"alpha", c.score.alpha}, {"kernel", c.score.kernel}};
    const auto& d = c.data;
    j["data"] = {{"root", d.root},
                 {"train_per_class", d.train_per_class},
                 {"test_per_class", d.test_per_class},
                 {"seen_classes", d.seen_classes},
                 {"jitter", d.jitter},
                 {"seed", d.seed},
                 {"contamination", d.contamination},
                 {"mnist_images", d.mnist_images},
                 {"mnist_labels", d.mnist_labels}};
    j["run_dir"] = c.run_dir;
    return j;
}

namespace {

ExperimentConfig strict_from_json(const json& j) {
    ExperimentConfig c;
    const auto& m = j.at("model");
    c.model.mode = model::parse_mode(m.at("mode").get<std::string>());
    c.model.channels = m.at("channels").get<int64_t>();
    c.model.image_h = m.at("image_h").get<int64_t>();
    c.model.image_w = m.at("image_w").get<int64_t>();
    c.model.encoder_widths = m.at("encoder_widths").get<std::vector<int64_t>>();
    c.model.decoder_widths = m.at("decoder_widths").get<std::vector<int64_t>>();
    c.model.depth = m.at("depth").get<int64_t>();
    c.model.memory_items = m.at("memory_items").get<int64_t>();
    c.model.memory_init_std = m.at("memory_init_std").get<double>();
    c.model.mask_width = m.at("mask_width").get<int64_t>();
    c.model.compressed_skip = m.at("compressed_skip").get<bool>();
    c.model.skip_reduction = m.at("skip_reduction").get<int64_t>();
    c.model.use_memory = m.at("use_memory").get<bool>();
    c.model.use_deformation = m.at("use_deformation").get<bool>();
    c.model.use_background = m.at("use_background").get<bool>();
    c.model.seed = m.at("seed").get<uint64_t>();
    const auto& e = m.at("estimator");
    c.model.estimator.trunk_blocks = e.at("trunk_blocks").get<int64_t>();
    c.model.estimator.trunk_width = e.at("trunk_width").get<int64_t>();
    c.model.estimator.heads = heads_from_json(e.at("heads"));
    c.model.estimator.head_init_gain = e.at("head_init_gain").get<double>();
    c.model.estimator.backward_heads = c.model.mode == model::Mode::PPDM;
    c.model.estimator.in_channels = c.model.channels;
    c.model.estimator.image_h = c.model.image_h;
    c.model.estimator.image_w = c.model.image_w;

    const auto& l = j.at("losses");
    c.losses.beta = l.at("beta").get<double>();
    c.losses.gamma1 = l.at("gamma1").get<double>();
    c.losses.gamma2 = l.at("gamma2").get<double>();
    c.losses.gamma3 = l.at("gamma3").get<double>();
    c.losses.lambda_grad = l.at("lambda_grad").get<double>();
    c.losses.deformation.smoothness = l.at("smoothness_weight").get<double>();
    c.losses.deformation.strength = l.at("strength_weight").get<double>();

    const auto& o = j.at("optim");
    c.optim.lr = o.at("lr").get<double>();
    c.optim.lr_floor = o.at("lr_floor").get<double>();
    c.optim.weight_decay = o.at("weight_decay").get<double>();
    c.optim.epochs = o.at("epochs").get<int64_t>();
    c.optim.batch = o.at("batch").get<int64_t>();
    c.optim.staleness = o.at("staleness").get<int64_t>();

    c.score.alpha = j.at("score").at("alpha").get<double>();
    c.score.kernel = j.at("score").at("kernel").get<std::string>();

    const auto& d = j.at("data");
    c.data.root = d.at("root").get<std::string>();
    c.data.train_per_class = d.at("train_per_class").get<int64_t>();
    c.data.test_per_class = d.at("test_per_class").get<int64_t>();
    c.data.seen_classes = d.at("seen_classes").get<std::set<int>>();
    c.data.jitter = d.at("jitter").get<int64_t>();
    c.data.seed = d.at("seed").get<uint64_t>();
    c.data.contamination = d.at("contamination").get<double>();
    c.data.mnist_images = d.at("mnist_images").get<std::string>();
    c.data.mnist_labels = d.at("mnist_labels").get<std::string>();
    c.run_dir = j.at("run_dir").get<std::string>();
    return c;
}

}  // namespace

ExperimentConfig ppdm_defaults() {
    ExperimentConfig c;
    c.model.mode = model::Mode::PPDM;
    c.model.estimator.backward_heads = true;
    c.losses.gamma2 = 1.0;
    return c;
}

ExperimentConfig from_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
    bool ppdm = false;
    if (j.contains("model") && j["model"].is_object() && j["model"].contains("mode")) {
        ppdm = model::parse_mode(j["model"]["mode"].get<std::string>()) == model::Mode::PPDM;
    }
    json merged = to_json(ppdm ? ppdm_defaults() : ExperimentConfig{});
    check_keys(j, merged, "");
    merged.merge_patch(j);
    ExperimentConfig c;
    try {
        c = strict_from_json(merged);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string serialize(const ExperimentConfig& config) { return to_json(config).dump(2) + "\n"; }

ExperimentConfig parse(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config: parse error at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    return from_json(j);
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override '" + assignment + "' is not key=value");
    const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json* node = &j;
    size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

void ExperimentConfig::validate() const {
    model.validate();
    auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
    if (optim.epochs < 0) fail("optim.epochs must be >= 0");
    if (optim.batch < 1) fail("optim.batch must be >= 1");
    if (!(optim.lr > 0)) fail("optim.lr must be > 0");
    if (optim.staleness < 1) fail("optim.staleness must be >= 1");
    if (data.seen_classes.empty()) fail("data.seen_classes must be nonempty");
    for (int c : data.seen_classes)
        if (c < 0 || c > 9) fail("data.seen_classes entries must be in 0..9");
    if (!(data.contamination >= 0 && data.contamination < 0.5)) fail("data.contamination must be in [0, 0.5)");
    if (data.train_per_class < 0 || data.test_per_class < 0) fail("data sample counts must be >= 0");
    if (data.mnist_images.empty() != data.mnist_labels.empty()) fail("mnist_images and mnist_labels go together");
    scoring::parse_kernel(score.kernel);
    if (losses.beta < 0 || losses.gamma1 < 0 || losses.gamma2 < 0 || losses.gamma3 < 0 || losses.lambda_grad < 0) {
        fail("loss weights must be nonnegative");
    }
}

ExperimentConfig ExperimentConfig::with_arm(const std::string& arm) const {
    ExperimentConfig c = *this;
    if (arm == "full") {
    } else if (arm == "no_pdm") {
        c.model.use_deformation = false;
    } else if (arm == "k1") {
        c.model.estimator.heads = {c.model.estimator.heads.back()};
    } else if (arm == "no_memory") {
        c.model.use_memory = false;
    } else if (arm == "no_bg") {
        c.model.use_background = false;
    } else if (arm == "no_strength") {
        c.losses.deformation.strength = 0.0;
    } else if (arm == "no_smoothness") {
        c.losses.deformation.smoothness = 0.0;
    } else if (arm.rfind("gamma3=", 0) == 0) {
        c.losses.gamma3 = std::stod(arm.substr(7));
    } else {
        throw std::invalid_argument("unknown ablation arm '" + arm + "'");
    }
    c.run_dir = run_dir + "/" + arm;
    c.validate();
    return c;
}

}  // namespace dmad::app
