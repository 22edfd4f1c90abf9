#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "dmad/data/dataset.hpp"
#include "dmad/data/io.hpp"
#include "oracles.hpp"

using namespace dmad;
using namespace dmad::data;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("dmad_test_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

GrayImage random_gray(int64_t h, int64_t w, uint64_t seed) {
    std::mt19937_64 rng(seed);
    GrayImage g{h, w, std::vector<uint8_t>(static_cast<size_t>(h * w))};
    for (auto& p : g.pixels) p = static_cast<uint8_t>(rng() & 0xFF);
    return g;
}

LabeledImage image_of(Tensor<double> pixels, const std::string& id = "img", int label = 0) {
    LabeledImage li;
    li.id = id;
    li.label = label;
    li.pixels = std::move(pixels);
    return li;
}

Dataset pool(const std::string& prefix, int per_class, int classes = 10) {
    Dataset d;
    for (int c = 0; c < classes; ++c)
        for (int i = 0; i < per_class; ++i)
            d.push_back(image_of(Tensor<double>({1, 2, 2}), prefix + std::to_string(c) + "-" + std::to_string(i), c));
    return d;
}

std::pair<int64_t, int64_t> argmax_yx(const Tensor<double>& t) {
    const auto it = std::max_element(t.vec().begin(), t.vec().end());
    const auto i = static_cast<int64_t>(it - t.vec().begin());
    return {i / t.dim(2), i % t.dim(2)};
}

double brute_auc(const std::vector<std::pair<double, bool>>& s) {
    double wins = 0, pairs = 0;
    for (const auto& [sp, fp] : s)
        for (const auto& [sn, fn] : s)
            if (fp && !fn) {
                pairs += 1;
                wins += sp > sn ? 1.0 : (sp == sn ? 0.5 : 0.0);
            }
    return wins / pairs;
}

}  // namespace

TEST_CASE("pgm round trip and normalization") {
    TempDir dir("pgm");
    const auto g = random_gray(7, 5, 1);
    write_pgm(dir.path / "a.pgm", g);
    CHECK(read_pgm(dir.path / "a.pgm") == g);
    CHECK(byte_to_unit(0) == -1.0);
    CHECK(byte_to_unit(255) == 1.0);
    for (int v = 0; v < 256; ++v) CHECK(unit_to_byte(byte_to_unit(static_cast<uint8_t>(v))) == v);
}

TEST_CASE("pgm errors name the file and byte offset") {
    TempDir dir("pgm_bad");
    auto write = [&](const std::string& name, const std::string& bytes) {
        std::ofstream(dir.path / name, std::ios::binary) << bytes;
        return dir.path / name;
    };
    auto message = [](const fs::path& p) {
        try {
            read_pgm(p);
        } catch (const DataError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    const auto bad_magic = write("magic.pgm", "P2\n2 2\n255\n0000");
    CHECK(message(bad_magic).find("magic.pgm") != std::string::npos);
    CHECK(message(bad_magic).find("byte offset 0") != std::string::npos);

    const auto truncated = write("short.pgm", "P5\n2 2\n255\nabc");
    const auto m = message(truncated);
    CHECK(m.find("short.pgm") != std::string::npos);
    CHECK(m.find("byte offset") != std::string::npos);

    CHECK_THROWS_AS(read_pgm(write("maxval.pgm", "P5\n2 2\n65535\n01234567")), DataError);
    CHECK_THROWS_AS(read_pgm(dir.path / "missing.pgm"), DataError);
}

TEST_CASE("load_dataset: empty directory, round trip, placement") {
    TempDir dir("dataset");
    CanvasOptions canvas{32, 32, 4, 9};
    CHECK(load_dataset(dir.path, canvas).empty());

    std::vector<std::pair<ManifestEntry, GrayImage>> items;
    for (int i = 0; i < 6; ++i)
        items.push_back({{"s" + std::to_string(i), "", i % 3, i == 5, "raw"}, render_glyph(i % 10, 100 + i, 20)});
    write_dataset(dir.path, items);
    CHECK(read_manifest(dir.path).size() == 6);
    for (const auto& [entry, glyph] : items)
        CHECK(read_pgm(dir.path / std::to_string(entry.label) / (entry.id + ".pgm")) == glyph);

    const auto loaded = load_dataset(dir.path, canvas);
    REQUIRE(loaded.size() == 6);
    for (size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].id == items[i].first.id);
        CHECK(loaded[i].label == items[i].first.label);
        CHECK(loaded[i].anomaly == items[i].first.anomaly);
        CHECK(loaded[i].pixels.shape() == Shape{1, 32, 32});
        CHECK(loaded[i].pixels == place_on_canvas(items[i].second, canvas, items[i].first.id));
        for (double v : loaded[i].pixels.vec()) CHECK((v >= -1.0 && v <= 1.0));
    }
    // The glyph bytes survive placement exactly: every canvas value is a byte level.
    for (double v : loaded[0].pixels.vec()) CHECK(byte_to_unit(unit_to_byte(v)) == v);

    CanvasOptions other = canvas;
    other.seed = 10;
    CHECK(place_on_canvas(items[0].second, canvas, "s0") == place_on_canvas(items[0].second, canvas, "s0"));
    bool differs = false;
    for (int i = 0; i < 6; ++i)
        differs = differs || place_on_canvas(items[0].second, canvas, "s" + std::to_string(i)) !=
                                 place_on_canvas(items[0].second, other, "s" + std::to_string(i));
    CHECK(differs);

    fs::remove(dir.path / "manifest.json");
    CHECK_THROWS_AS(load_dataset(dir.path, canvas), DataError);
}

TEST_CASE("render_glyph: deterministic and distinct per class") {
    CHECK(render_glyph(3, 7) == render_glyph(3, 7));
    CHECK(render_glyph(3, 7) != render_glyph(3, 8));
    for (int d = 0; d < 10; ++d) {
        const auto g = render_glyph(d, 1);
        CHECK(g.height == 28);
        const auto lit = std::count_if(g.pixels.begin(), g.pixels.end(), [](uint8_t p) { return p > 128; });
        CHECK(lit > 20);
        CHECK(lit < 28 * 28 / 2);
    }
    CHECK_THROWS_AS(render_glyph(10, 1), std::invalid_argument);
}

TEST_CASE("ood_split") {
    const auto train = pool("tr", 3), test = pool("te", 2);
    const auto s = ood_split(train, test, {1, 3, 5, 7, 9});
    std::set<int> train_labels, unseen;
    for (const auto& x : s.train) train_labels.insert(x.label);
    for (const auto& x : s.test_unseen) {
        unseen.insert(x.label);
        CHECK(x.anomaly);
    }
    for (const auto& x : s.test_seen) CHECK_FALSE(x.anomaly);
    CHECK(train_labels == std::set<int>{1, 3, 5, 7, 9});
    CHECK(unseen == std::set<int>{0, 2, 4, 6, 8});
    CHECK(s.train.size() == 15);
    CHECK(s.test_seen.size() + s.test_unseen.size() == test.size());

    std::set<std::string> ids;
    size_t total = 0;
    for (const auto* part : {&s.train, &s.test_seen, &s.test_unseen})
        for (const auto& x : *part) {
            ids.insert(x.id);
            ++total;
        }
    CHECK(ids.size() == total);

    CHECK(ood_split(train, test, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}).test_unseen.empty());
    CHECK_THROWS_AS(ood_split(train, test, {1, 12}), std::invalid_argument);
    CHECK_THROWS_AS(ood_split(train, test, {}), std::invalid_argument);
    CHECK_THROWS_AS(ood_split(train, train, {1}), std::invalid_argument);
}

TEST_CASE("synthesize_warp") {
    const int64_t h = 24, w = 24;
    Tensor<double> one_hot({1, h, w}, -1.0);
    one_hot[10 * w + 9] = 1.0;
    const auto src = image_of(one_hot);

    const auto same = synthesize_warp(src, {});
    CHECK(same.pixels == src.pixels);

    WarpSpec t2;
    t2.translate_x = 2;
    const auto moved = synthesize_warp(src, t2);
    CHECK(argmax_yx(moved.pixels) == std::pair<int64_t, int64_t>{10, 11});
    CHECK(moved.anomaly == src.anomaly);
    CHECK(moved.provenance.rfind("warped(", 0) == 0);
    REQUIRE(moved.mask.has_value());
    CHECK(moved.mask->shape() == Shape{1, h, w});
    for (double v : moved.mask->vec()) CHECK((v == 0.0 || v == 1.0));

    WarpSpec full_spec{1.5, -0.5, 7.0, 2.0, 8.0, 77};
    CHECK(synthesize_warp(src, full_spec).pixels == synthesize_warp(src, full_spec).pixels);

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor<double> rnd({1, h, w});
    for (auto& v : rnd.vec()) v = u(rng);
    for (int m = 1; m <= 4; ++m)
        for (auto [tx, ty] : {std::pair{m, 0}, std::pair{0, m}, std::pair{m, -m}}) {
            CAPTURE(m);
            WarpSpec fwd, back;
            fwd.translate_x = tx;
            fwd.translate_y = ty;
            back.translate_x = -tx;
            back.translate_y = -ty;
            const auto there_back = synthesize_warp(synthesize_warp(image_of(rnd), fwd), back);
            for (int64_t y = m; y < h - m; ++y)
                for (int64_t x = m; x < w - m; ++x)
                    CHECK(std::abs(there_back.pixels[size_t(y * w + x)] - rnd[size_t(y * w + x)]) < 1e-6);
        }
}

TEST_CASE("contaminate") {
    const auto train = pool("n", 100), anomalies = pool("a", 10);
    const auto none = contaminate(train, anomalies, 0.0, 1);
    CHECK(none.contaminant_ids.empty());
    REQUIRE(none.mixed.size() == train.size());
    for (size_t i = 0; i < train.size(); ++i) CHECK(none.mixed[i].id == train[i].id);

    const auto c = contaminate(train, anomalies, 0.05, 1);
    CHECK(c.mixed.size() == 1000);
    CHECK(c.contaminant_ids.size() == 50);
    const auto contaminants = std::count_if(c.mixed.begin(), c.mixed.end(),
                                            [](const LabeledImage& x) { return x.provenance == "contaminant"; });
    CHECK(contaminants == 50);
    CHECK(contaminate(train, anomalies, 0.05, 1).contaminant_ids == c.contaminant_ids);
    CHECK(contaminate(train, anomalies, 0.05, 2).contaminant_ids != c.contaminant_ids);
    CHECK(std::set<std::string>(c.contaminant_ids.begin(), c.contaminant_ids.end()).size() == 50);

    CHECK(contaminate(pool("n", 1, 7), anomalies, 0.1, 3).contaminant_ids.size() == 1);
    CHECK_THROWS_AS(contaminate(train, pool("a", 1, 2), 0.05, 1), std::invalid_argument);
    CHECK_THROWS_AS(contaminate(train, anomalies, 0.5, 1), std::invalid_argument);
    CHECK_THROWS_AS(contaminate(train, anomalies, -0.1, 1), std::invalid_argument);
}

TEST_CASE("compute_auc: examples") {
    CHECK(compute_auc({{0.1, false}, {0.2, false}, {0.8, true}, {0.9, true}}) == 1.0);
    CHECK(compute_auc({{1, false}, {1, true}, {1, true}, {1, false}}) == 0.5);
    // One negative (2) against positives (1, 3, 4): two of three pairs won.
    const std::vector<std::pair<double, bool>> s{{1, true}, {2, false}, {3, true}, {4, true}};
    CHECK(compute_auc(s) == brute_auc(s));
    CHECK(compute_auc(s) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK_THROWS_AS(compute_auc({{1, true}, {2, true}}), std::invalid_argument);
    CHECK_THROWS_AS(compute_auc({}), std::invalid_argument);
}

TEST_CASE("compute_auc: brute-force oracle and monotone invariance") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 300; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 49);
        std::vector<std::pair<double, bool>> s;
        for (int i = 0; i < n; ++i) s.push_back({double(rng() % 7), i == 0 ? true : (i == 1 ? false : (rng() & 1) != 0)});
        CHECK(compute_auc(s) == brute_auc(s));
        CHECK(compute_auc(s) == oracle::auc(s));
        auto t = s;
        for (auto& [v, f] : t) v = std::exp(3.0 * v) - 5.0;
        CHECK(compute_auc(t) == compute_auc(s));
    }
}

TEST_CASE("spearman") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(spearman({1, 2, 3, 4, 5}, {1, 4, 9, 16, 25}) == doctest::Approx(1.0));
    // Ties take average ranks: ranks (1.5, 1.5, 3) vs (1, 2, 3).
    CHECK(spearman({1, 1, 2}, {1, 2, 3}) == doctest::Approx(std::sqrt(0.75)));
}

TEST_CASE("stack") {
    Dataset d{image_of(Tensor<double>({1, 2, 2}, 0.5), "a"), image_of(Tensor<double>({1, 2, 2}, -0.5), "b")};
    const auto t = stack<float>(d, {1, 0});
    CHECK(t.shape() == Shape{2, 1, 2, 2});
    CHECK(t[0] == -0.5f);
    CHECK(t[4] == 0.5f);
}
