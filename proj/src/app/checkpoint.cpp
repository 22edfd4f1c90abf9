#include "dmad/app/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "dmad/data/io.hpp"

namespace dmad::app {

using json = nlohmann::json;
using data::DataError;

namespace {

constexpr const char* kMagic = "DMAD-CHECKPOINT";

void append_le(std::string& out, float v) {
    uint32_t bits = std::bit_cast<uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

float read_le(const char* p) {
    uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= uint32_t(uint8_t(p[i])) << (8 * i);
    return std::bit_cast<float>(bits);
}

template <typename T>
void add_tensor(json& manifest, std::string& blob, const std::string& name, const Tensor<T>& t) {
    manifest.push_back({{"name", name}, {"shape", t.shape()}, {"offset", blob.size()}, {"count", t.size()}});
    for (size_t i = 0; i < t.size(); ++i) append_le(blob, static_cast<float>(t[i]));
}

// Model geometry fields a checkpoint must agree on.
json geometry(const json& config) {
    json g = config.at("model");
    g.erase("seed");
    g["estimator"].erase("head_init_gain");
    g.erase("memory_init_std");
    return g;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& config, const model::Model<T>& model,
                     const AdamW<T>* optimizer, const TrainingState& state) {
    json manifest = json::array();
    std::string blob;
    for (const auto& p : model.parameters()) add_tensor(manifest, blob, p.name, p.var.value());
    json steps = json::object();
    if (optimizer) {
        for (const auto& [name, slot] : optimizer->state()) {
            add_tensor(manifest, blob, "optim.m/" + name, slot.m);
            add_tensor(manifest, blob, "optim.v/" + name, slot.v);
            steps[name] = slot.step;
        }
    }
    json header{{"format_version", kCheckpointVersion},
                {"config", to_json(config)},
                {"tensors", manifest},
                {"state",
                 {{"epoch", state.epoch},
                  {"step", state.step},
                  {"best_loss", state.best_loss},
                  {"has_best", state.has_best},
                  {"bank_usage", model.bank().usage_counts()},
                  {"bank_idle", model.bank().idle_epochs()},
                  {"optimizer_steps", steps}}}};
    const std::string text = header.dump();
    std::string out = std::string(kMagic) + "\n" + std::to_string(text.size()) + "\n" + text;
    out += blob;
    data::atomic_write(path, out);
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
    const std::string bytes = data::read_file(path);
    const std::string name = path.string();
    const size_t l1 = bytes.find('\n');
    if (l1 == std::string::npos || bytes.compare(0, l1, kMagic) != 0) {
        throw DataError(name + ": not a checkpoint (bad magic at byte offset 0)");
    }
    const size_t l2 = bytes.find('\n', l1 + 1);
    if (l2 == std::string::npos) throw DataError(name + ": truncated header length at byte offset " + std::to_string(l1 + 1));
    size_t header_len = 0;
    try {
        header_len = std::stoull(bytes.substr(l1 + 1, l2 - l1 - 1));
    } catch (const std::exception&) {
        throw DataError(name + ": bad header length at byte offset " + std::to_string(l1 + 1));
    }
    const size_t header_start = l2 + 1, data_start = header_start + header_len;
    if (data_start > bytes.size()) throw DataError(name + ": truncated header at byte offset " + std::to_string(bytes.size()));
    json header;
    try {
        header = json::parse(bytes.substr(header_start, header_len));
    } catch (const json::parse_error& e) {
        throw DataError(name + ": malformed header at byte offset " + std::to_string(header_start + e.byte));
    }
    CheckpointData out;
    try {
        if (header.at("format_version").get<int>() != kCheckpointVersion) {
            throw DataError(name + ": unsupported format version " + header.at("format_version").dump());
        }
        out.config = header.at("config");
        const auto& s = header.at("state");
        out.state.epoch = s.at("epoch").get<int64_t>();
        out.state.step = s.at("step").get<int64_t>();
        out.state.best_loss = s.at("best_loss").get<double>();
        out.state.has_best = s.at("has_best").get<bool>();
        out.state.bank_usage = s.at("bank_usage").get<std::vector<int64_t>>();
        out.state.bank_idle = s.at("bank_idle").get<std::vector<int64_t>>();
        for (const auto& t : header.at("tensors")) {
            const auto offset = t.at("offset").get<size_t>(), count = t.at("count").get<size_t>();
            const Shape shape = t.at("shape").get<Shape>();
            if (shape_numel(shape) != static_cast<int64_t>(count)) {
                throw DataError(name + ": tensor " + t.at("name").get<std::string>() + " count does not match shape");
            }
            if (data_start + offset + 4 * count > bytes.size()) {
                throw DataError(name + ": tensor " + t.at("name").get<std::string>() + " truncated at byte offset " +
                                std::to_string(bytes.size()));
            }
            Tensor<float> v(shape);
            const char* p = bytes.data() + data_start + offset;
            for (size_t i = 0; i < count; ++i) v[i] = read_le(p + 4 * i);
            out.tensors.emplace_back(t.at("name").get<std::string>(), std::move(v));
        }
        out.optimizer_steps = s.at("optimizer_steps");
    } catch (const json::exception& e) {
        throw DataError(name + ": invalid header: " + e.what());
    }
    return out;
}

template <typename T>
TrainingState load_checkpoint(const std::filesystem::path& path, model::Model<T>& model, AdamW<T>* optimizer) {
    CheckpointData ck = read_checkpoint(path);
    const json& steps = ck.optimizer_steps;
    ExperimentConfig saved = from_json(ck.config);
    ExperimentConfig current;
    current.model = model.config();
    if (geometry(to_json(saved)) != geometry(to_json(current))) {
        throw DataError(path.string() + ": checkpoint model geometry does not match the configuration");
    }
    std::map<std::string, Tensor<float>> by_name;
    for (auto& [n, t] : ck.tensors) by_name.emplace(n, std::move(t));
    for (auto p : model.parameters()) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) throw DataError(path.string() + ": missing tensor " + p.name);
        if (it->second.shape() != p.var.shape()) throw DataError(path.string() + ": shape mismatch for " + p.name);
        p.var.mutable_value() = it->second.template cast<T>();
    }
    if (!ck.state.bank_usage.empty()) model.bank().set_bookkeeping(ck.state.bank_usage, ck.state.bank_idle);
    if (optimizer) {
        optimizer->state().clear();
        for (auto it = steps.begin(); it != steps.end(); ++it) {
            typename AdamW<T>::Slot slot;
            slot.m = by_name.at("optim.m/" + it.key()).template cast<T>();
            slot.v = by_name.at("optim.v/" + it.key()).template cast<T>();
            slot.step = it.value().get<int64_t>();
            optimizer->state()[it.key()] = std::move(slot);
        }
    }
    return ck.state;
}

template void save_checkpoint<float>(const std::filesystem::path&, const ExperimentConfig&, const model::Model<float>&,
                                     const AdamW<float>*, const TrainingState&);
template void save_checkpoint<double>(const std::filesystem::path&, const ExperimentConfig&,
                                      const model::Model<double>&, const AdamW<double>*, const TrainingState&);
template TrainingState load_checkpoint<float>(const std::filesystem::path&, model::Model<float>&, AdamW<float>*);
template TrainingState load_checkpoint<double>(const std::filesystem::path&, model::Model<double>&, AdamW<double>*);

}  // namespace dmad::app
