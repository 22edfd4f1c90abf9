#include "dmad/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

#include "dmad/core/ops.hpp"
#include "json.hpp"

namespace dmad::data {

namespace fs = std::filesystem;
using json = nlohmann::json;

double byte_to_unit(uint8_t v) { return static_cast<double>(v) / 127.5 - 1.0; }

uint8_t unit_to_byte(double v) {
    const double b = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
    return static_cast<uint8_t>(b);
}

namespace {

struct Pt {
    double x, y;
};
using Stroke = std::vector<Pt>;

Stroke arc(double cx, double cy, double rx, double ry, double a0, double a1, int n) {
    Stroke s;
    for (int i = 0; i <= n; ++i) {
        const double a = (a0 + (a1 - a0) * i / n) * std::numbers::pi / 180.0;
        s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
    }
    return s;
}

std::vector<Stroke> digit_template(int digit) {
    switch (digit) {
        case 0: return {arc(0.5, 0.5, 0.3, 0.42, 0, 360, 24)};
        case 1: return {{{0.38, 0.22}, {0.55, 0.08}, {0.55, 0.92}}};
        case 2: {
            auto s = arc(0.5, 0.3, 0.28, 0.22, 190, 390, 12);
            s.push_back({0.22, 0.92});
            s.push_back({0.82, 0.92});
            return {s};
        }
        case 3: return {arc(0.48, 0.29, 0.26, 0.21, 200, 450, 12), arc(0.48, 0.71, 0.28, 0.21, 270, 520, 12)};
        case 4: return {{{0.66, 0.92}, {0.66, 0.08}, {0.16, 0.66}, {0.86, 0.66}}};
        case 5: return {{{0.78, 0.08}, {0.32, 0.08}, {0.31, 0.47}}, arc(0.5, 0.66, 0.28, 0.25, 230, 500, 14)};
        case 6: return {{{0.70, 0.08}, {0.45, 0.25}, {0.29, 0.6}}, arc(0.5, 0.68, 0.22, 0.24, 180, 540, 20)};
        case 7: return {{{0.18, 0.08}, {0.82, 0.08}, {0.42, 0.92}}};
        case 8: return {arc(0.5, 0.28, 0.22, 0.2, 0, 360, 20), arc(0.5, 0.7, 0.27, 0.22, 0, 360, 20)};
        case 9: return {arc(0.5, 0.32, 0.24, 0.24, 0, 360, 20), {{0.74, 0.32}, {0.70, 0.92}}};
        default: throw std::invalid_argument("render_glyph: digit must be in 0..9, got " + std::to_string(digit));
    }
}

double segment_distance(Pt p, Pt a, Pt b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

uint64_t fnv1a(const std::string& s, uint64_t seed) {
    uint64_t h = 1469598103934665603ULL ^ seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

GrayImage render_glyph(int digit, uint64_t seed, int64_t size) {
    auto strokes = digit_template(digit);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double slant = 0.25 * u(rng);
    const double sx = 0.975 + 0.125 * u(rng), sy = 1.0 + 0.1 * u(rng);
    const double rot = 10.0 * u(rng) * std::numbers::pi / 180.0;
    const double thickness = (2.0 + 0.5 * u(rng)) * static_cast<double>(size) / 28.0;
    const double box = static_cast<double>(size) * 20.0 / 28.0;
    const double origin = (static_cast<double>(size) - box) / 2.0;
    for (auto& s : strokes)
        for (auto& p : s) {
            double x = p.x - 0.5 + 0.03 * u(rng), y = p.y - 0.5 + 0.03 * u(rng);
            x = (x - slant * y) * sx;
            y *= sy;
            const double rx = std::cos(rot) * x - std::sin(rot) * y, ry = std::sin(rot) * x + std::cos(rot) * y;
            p = {origin + (rx + 0.5) * box, origin + (ry + 0.5) * box};
        }
    GrayImage img{size, size, std::vector<uint8_t>(static_cast<size_t>(size * size), 0)};
    for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x) {
            const Pt p{static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5};
            double d = 1e9;
            for (const auto& s : strokes)
                for (size_t i = 0; i + 1 < s.size(); ++i) d = std::min(d, segment_distance(p, s[i], s[i + 1]));
            const double v = std::clamp(thickness / 2.0 + 0.5 - d, 0.0, 1.0);
            img.pixels[static_cast<size_t>(y * size + x)] = static_cast<uint8_t>(std::round(255.0 * v));
        }
    return img;
}

void write_dataset(const fs::path& root, const std::vector<std::pair<ManifestEntry, GrayImage>>& items) {
    json entries = json::array();
    for (const auto& [entry, image] : items) {
        const std::string rel =
            entry.path.empty() ? (fs::path(std::to_string(entry.label)) / (entry.id + ".pgm")).generic_string() : entry.path;
        write_pgm(root / rel, image);
        entries.push_back({{"id", entry.id},
                           {"path", rel},
                           {"label", entry.label},
                           {"anomaly", entry.anomaly},
                           {"provenance", entry.provenance}});
    }
    json manifest{{"format", "dmad-dataset"}, {"version", 1}, {"entries", entries}};
    atomic_write(root / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<ManifestEntry> read_manifest(const fs::path& root) {
    const fs::path path = root / "manifest.json";
    const std::string text = read_file(path);
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(path.string() + ": malformed manifest at byte offset " + std::to_string(e.byte) + ": " + e.what());
    }
    std::vector<ManifestEntry> out;
    try {
        for (const auto& e : doc.at("entries")) {
            ManifestEntry m;
            m.id = e.at("id").get<std::string>();
            m.path = e.at("path").get<std::string>();
            m.label = e.at("label").get<int>();
            m.anomaly = e.value("anomaly", false);
            m.provenance = e.value("provenance", std::string("raw"));
            out.push_back(std::move(m));
        }
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": invalid manifest: " + e.what());
    }
    return out;
}

Tensor<double> place_on_canvas(const GrayImage& glyph, const CanvasOptions& canvas, const std::string& id) {
    if (glyph.height > canvas.height || glyph.width > canvas.width) {
        throw DataError("image " + id + " (" + std::to_string(glyph.height) + "x" + std::to_string(glyph.width) +
                        ") is larger than the canvas");
    }
    std::mt19937_64 rng(fnv1a(id, canvas.seed));
    const int64_t room_y = std::min(canvas.jitter, (canvas.height - glyph.height) / 2);
    const int64_t room_x = std::min(canvas.jitter, (canvas.width - glyph.width) / 2);
    std::uniform_int_distribution<int64_t> dy(-room_y, room_y), dx(-room_x, room_x);
    const int64_t oy = (canvas.height - glyph.height) / 2 + dy(rng);
    const int64_t ox = (canvas.width - glyph.width) / 2 + dx(rng);
    Tensor<double> out({1, canvas.height, canvas.width}, -1.0);
    for (int64_t y = 0; y < glyph.height; ++y)
        for (int64_t x = 0; x < glyph.width; ++x)
            out[(oy + y) * canvas.width + ox + x] = byte_to_unit(glyph.pixels[static_cast<size_t>(y * glyph.width + x)]);
    return out;
}

Dataset load_dataset(const fs::path& root, const CanvasOptions& canvas) {
    if (!fs::is_directory(root)) throw DataError(root.string() + ": not a dataset directory");
    if (!fs::exists(root / "manifest.json")) {
        if (fs::is_empty(root)) return {};
        throw DataError(root.string() + ": missing manifest.json");
    }
    Dataset out;
    for (const auto& entry : read_manifest(root)) {
        LabeledImage img;
        img.id = entry.id;
        img.label = entry.label;
        img.anomaly = entry.anomaly;
        img.provenance = entry.provenance;
        img.pixels = place_on_canvas(read_pgm(root / entry.path), canvas, entry.id);
        out.push_back(std::move(img));
    }
    return out;
}

OodSplit ood_split(const Dataset& train, const Dataset& test, const std::set<int>& seen_classes, int num_classes) {
    if (seen_classes.empty()) throw std::invalid_argument("ood_split: no seen classes");
    for (int c : seen_classes)
        if (c < 0 || c >= num_classes) throw std::invalid_argument("ood_split: unknown class id " + std::to_string(c));
    std::set<std::string> ids;
    for (const auto& s : train) ids.insert(s.id);
    OodSplit out;
    for (const auto& s : train) {
        if (!seen_classes.count(s.label)) continue;
        auto copy = s;
        copy.anomaly = false;
        out.train.push_back(std::move(copy));
    }
    for (const auto& s : test) {
        if (ids.count(s.id)) throw std::invalid_argument("ood_split: sample " + s.id + " is in both pools");
        auto copy = s;
        copy.anomaly = !seen_classes.count(s.label);
        (copy.anomaly ? out.test_unseen : out.test_seen).push_back(std::move(copy));
    }
    return out;
}

LabeledImage synthesize_warp(const LabeledImage& image, const WarpSpec& spec) {
    const int64_t c = image.pixels.dim(0), h = image.pixels.dim(1), w = image.pixels.dim(2);
    // Local displacement field at pixel resolution.
    std::vector<double> lx(static_cast<size_t>(h * w), 0.0), ly(static_cast<size_t>(h * w), 0.0);
    if (spec.local_amplitude != 0.0) {
        const auto gh = static_cast<int64_t>(std::ceil(static_cast<double>(h - 1) / spec.local_scale)) + 1;
        const auto gw = static_cast<int64_t>(std::ceil(static_cast<double>(w - 1) / spec.local_scale)) + 1;
        std::mt19937_64 rng(spec.seed);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        Tensor<double> ctrl({1, 2, gh, gw});
        for (auto& v : ctrl.vec()) v = u(rng);
        NoGradGuard guard;
        auto dense = ops::bilinear_upsample(Var<double>::constant(ctrl), h, w).value();
        double peak = 0.0;
        for (int64_t i = 0; i < h * w; ++i) peak = std::max(peak, std::hypot(dense[i], dense[h * w + i]));
        const double gain = peak > 0 ? spec.local_amplitude / peak : 0.0;
        for (int64_t i = 0; i < h * w; ++i) {
            lx[static_cast<size_t>(i)] = gain * dense[i];
            ly[static_cast<size_t>(i)] = gain * dense[h * w + i];
        }
    }
    const double theta = -spec.rotation_deg * std::numbers::pi / 180.0;
    const double cs = std::cos(theta), sn = std::sin(theta);
    const double cx = static_cast<double>(w - 1) / 2.0, cy = static_cast<double>(h - 1) / 2.0;
    Tensor<double> grid({1, h, w, 2});
    std::vector<double> displacement(static_cast<size_t>(h * w));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const size_t i = static_cast<size_t>(y * w + x);
            const double px = static_cast<double>(x) - spec.translate_x - cx;
            const double py = static_cast<double>(y) - spec.translate_y - cy;
            const double sx = spec.rotation_deg == 0.0 ? px + cx + lx[i] : cx + cs * px - sn * py + lx[i];
            const double sy = spec.rotation_deg == 0.0 ? py + cy + ly[i] : cy + sn * px + cs * py + ly[i];
            displacement[i] = std::hypot(sx - static_cast<double>(x), sy - static_cast<double>(y));
            grid[i * 2] = w > 1 ? -1.0 + 2.0 * sx / static_cast<double>(w - 1) : 0.0;
            grid[i * 2 + 1] = h > 1 ? -1.0 + 2.0 * sy / static_cast<double>(h - 1) : 0.0;
        }
    NoGradGuard guard;
    auto src = Var<double>::constant(Tensor<double>({1, c, h, w}, image.pixels.vec()));
    auto warped = ops::grid_sample(src, Var<double>::constant(grid)).value();

    LabeledImage out = image;
    out.pixels = Tensor<double>({c, h, w}, warped.vec());
    Tensor<double> mask({1, h, w});
    for (int64_t i = 0; i < h * w; ++i) {
        double change = 0.0;
        for (int64_t ch = 0; ch < c; ++ch) change = std::max(change, std::abs(out.pixels[ch * h * w + i] - image.pixels[ch * h * w + i]));
        mask[i] = displacement[static_cast<size_t>(i)] >= 0.5 && change > 0.02 ? 1.0 : 0.0;
    }
    out.mask = mask;
    char tag[96];
    std::snprintf(tag, sizeof tag, "warped(t=%g,%g;r=%g;l=%g)", spec.translate_x, spec.translate_y, spec.rotation_deg,
                  spec.local_amplitude);
    out.provenance = tag;
    return out;
}

Contamination contaminate(const Dataset& train, const Dataset& anomaly_pool, double ratio, uint64_t seed) {
    if (!(ratio >= 0.0 && ratio < 0.5)) throw std::invalid_argument("contaminate: ratio must be in [0, 0.5)");
    const auto count = static_cast<size_t>(std::ceil(ratio * static_cast<double>(train.size()) - 1e-9));
    if (count > anomaly_pool.size()) {
        throw std::invalid_argument("contaminate: pool has " + std::to_string(anomaly_pool.size()) + " samples, need " +
                                    std::to_string(count));
    }
    Contamination out;
    out.mixed = train;
    std::mt19937_64 rng(seed);
    std::vector<size_t> slots(train.size()), picks(anomaly_pool.size());
    std::iota(slots.begin(), slots.end(), size_t{0});
    std::iota(picks.begin(), picks.end(), size_t{0});
    std::shuffle(slots.begin(), slots.end(), rng);
    std::shuffle(picks.begin(), picks.end(), rng);
    for (size_t i = 0; i < count; ++i) {
        auto sample = anomaly_pool[picks[i]];
        sample.provenance = "contaminant";
        out.contaminant_ids.push_back(sample.id);
        out.mixed[slots[i]] = std::move(sample);
    }
    return out;
}

double compute_auc(const std::vector<std::pair<double, bool>>& scores) {
    std::vector<std::pair<double, bool>> sorted = scores;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    int64_t pos = 0, neg = 0;
    for (const auto& s : sorted) (s.second ? pos : neg)++;
    if (pos == 0 || neg == 0) throw std::invalid_argument("compute_auc: need both anomalous and normal samples");
    // Twice the Mann-Whitney statistic, kept integral.
    int64_t twice_wins = 0, neg_below = 0;
    for (size_t i = 0; i < sorted.size();) {
        size_t j = i;
        int64_t p = 0, n = 0;
        while (j < sorted.size() && sorted[j].first == sorted[i].first) (sorted[j++].second ? p : n)++;
        twice_wins += 2 * p * neg_below + p * n;
        neg_below += n;
        i = j;
    }
    return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(pos * neg));
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<size_t> order(v.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (size_t i = 0; i < order.size();) {
        size_t j = i;
        while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0 + 1.0;
        for (size_t k = i; k < j; ++k) ranks[order[k]] = r;
        i = j;
    }
    return ranks;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman: need two equal-length series");
    const auto ra = average_ranks(a), rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n, mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0 || sbb == 0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

template <typename T>
Tensor<T> stack(const Dataset& data, const std::vector<size_t>& rows) {
    if (rows.empty()) throw std::invalid_argument("stack: no rows");
    const auto& first = data.at(rows[0]).pixels;
    const int64_t c = first.dim(0), h = first.dim(1), w = first.dim(2);
    Tensor<T> out({static_cast<int64_t>(rows.size()), c, h, w});
    const size_t plane = static_cast<size_t>(c * h * w);
    for (size_t r = 0; r < rows.size(); ++r) {
        const auto& px = data.at(rows[r]).pixels;
        if (px.shape() != first.shape()) throw ShapeError("stack: sample " + data[rows[r]].id + " has a different shape");
        for (size_t i = 0; i < plane; ++i) out[r * plane + i] = static_cast<T>(px[i]);
    }
    return out;
}

template Tensor<float> stack<float>(const Dataset&, const std::vector<size_t>&);
template Tensor<double> stack<double>(const Dataset&, const std::vector<size_t>&);

}  // namespace dmad::data
