#include "convlogic/dataset_io.hpp"

#include "convlogic/quantise.hpp"
#include "support.hpp"

#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>

using namespace convlogic;
using testing::TempDir;

namespace {

Dataset tiny() {
    Dataset d;
    d.manifest.n_samples = 4;
    d.manifest.class_names = {"street", "park"};
    d.manifest.splits = {{"train", {0, 1}}, {"val", {2}}, {"test", {3}}};
    d.manifest.layers = {{"conv1", 3, false, "conv1.norms"}, {"output", 2, false, ""}};
    NormMatrix m(4, 3);
    for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = 0.5f * static_cast<float>(i);
    d.norms["conv1"] = m;
    d.labels = {0, 1, 1, 0};
    d.teacher = {0, 1, 0, 0};
    return d;
}

std::vector<char> slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::filesystem::path& p, const std::vector<char>& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

} // namespace

TEST_CASE("save then load is identity") {
    TempDir dir("ds");
    Dataset d = tiny();
    d.manifest.image_refs = std::vector<std::string>{"a.png", "b.png", "c.png", "d.png"};
    d.manifest.metadata["preprocess"] = "resize 224";
    save_dataset(d, dir.path);
    CHECK(load_dataset(dir.path) == d);
}

TEST_CASE("norm file layout is little-endian with header") {
    TempDir dir("raw");
    NormMatrix m(2, 1);
    m.at(0, 0) = 1.0f;
    m.at(1, 0) = -0.0f;
    write_norm_file(m, dir / "x.norms");
    const auto b = slurp(dir / "x.norms");
    REQUIRE(b.size() == 4 + 12 + 8);
    CHECK(std::string(b.begin(), b.begin() + 4) == "EATN");
    CHECK(b[4] == 1);   // version
    CHECK(b[8] == 2);   // rows
    CHECK(b[12] == 1);  // cols
    // 1.0f = 0x3f800000
    CHECK(static_cast<unsigned char>(b[19]) == 0x3f);
    CHECK(static_cast<unsigned char>(b[18]) == 0x80);
}

TEST_CASE("load rejects broken datasets") {
    TempDir dir("bad");
    const Dataset good = tiny();

    SUBCASE("missing directory") { CHECK_THROWS_AS(load_dataset(dir / "nope"), DataError); }

    SUBCASE("shape mismatch") {
        save_dataset(good, dir.path);
        NormMatrix wrong(4, 2);
        write_norm_file(wrong, dir / "conv1.norms");
        try {
            load_dataset(dir.path);
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("shape mismatch") != std::string::npos);
        }
    }

    SUBCASE("bad magic") {
        save_dataset(good, dir.path);
        auto b = slurp(dir / "conv1.norms");
        b[0] = 'X';
        spit(dir / "conv1.norms", b);
        CHECK_THROWS_AS(load_dataset(dir.path), DataError);
    }

    SUBCASE("truncated and trailing bytes") {
        save_dataset(good, dir.path);
        auto b = slurp(dir / "conv1.norms");
        spit(dir / "conv1.norms", {b.begin(), b.end() - 1});
        CHECK_THROWS_AS(load_dataset(dir.path), DataError);
        b.push_back(0);
        spit(dir / "conv1.norms", b);
        CHECK_THROWS_AS(load_dataset(dir.path), DataError);
    }

    SUBCASE("NaN norm") {
        Dataset d = good;
        d.norms["conv1"].at(1, 1) = std::numeric_limits<float>::quiet_NaN();
        CHECK_THROWS_AS(validate(d), DataError);
        save_dataset(good, dir.path);
        write_norm_file(d.norms["conv1"], dir / "conv1.norms");
        CHECK_THROWS_AS(load_dataset(dir.path), DataError);
    }

    SUBCASE("negative norm") {
        Dataset d = good;
        d.norms["conv1"].at(0, 0) = -1.0f;
        CHECK_THROWS_AS(validate(d), DataError);
    }

    SUBCASE("overlapping splits") {
        Dataset d = good;
        d.manifest.splits["val"] = {1};
        CHECK_THROWS_AS(validate(d), DataError);
    }

    SUBCASE("index out of range") {
        Dataset d = good;
        d.manifest.splits["test"] = {4};
        CHECK_THROWS_AS(validate(d), DataError);
    }

    SUBCASE("teacher class out of range") {
        Dataset d = good;
        d.teacher[0] = 2;
        CHECK_THROWS_AS(validate(d), DataError);
    }

    SUBCASE("last layer must be output") {
        Dataset d = good;
        d.manifest.layers.pop_back();
        CHECK_THROWS_AS(validate(d), DataError);
    }

    SUBCASE("malformed manifest") {
        save_dataset(good, dir.path);
        std::ofstream(dir / "manifest.json") << "{\"n_samples\": ";
        CHECK_THROWS_AS(load_dataset(dir.path), DataError);
    }

    SUBCASE("manifest missing a field") {
        save_dataset(good, dir.path);
        auto j = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
        j.erase("splits");
        std::ofstream(dir / "manifest.json") << j.dump();
        CHECK_THROWS_AS(load_dataset(dir.path), DataError);
    }
}

TEST_CASE("save into an unwritable location is an IoError") {
    TempDir dir("ro");
    std::ofstream(dir / "file") << "x";
    // a regular file where a directory is expected
    CHECK_THROWS_AS(save_dataset(tiny(), dir / "file" / "sub"), IoError);
}

TEST_CASE("identifier names") {
    CHECK(is_identifier("conv13"));
    CHECK(is_identifier("layer4_1-b"));
    CHECK_FALSE(is_identifier(""));
    CHECK_FALSE(is_identifier("4conv"));
    CHECK_FALSE(is_identifier("a b"));
    CHECK_FALSE(is_identifier("a.b"));
}

TEST_CASE("planted rule text") {
    const auto r = parse_planted_rule("2 <- 0 & !5");
    CHECK(r.target == 2);
    CHECK(r.antecedents == std::vector<Condition>{{0, true}, {5, false}});
    CHECK(parse_planted_rule("1 <- true").antecedents.empty());
    CHECK_THROWS(parse_planted_rule("1 <- & 2"));
    CHECK_THROWS(parse_planted_rule("x <- 2"));
}

TEST_CASE("synthetic generator") {
    SynthConfig cfg;
    cfg.n_samples = 4096;
    cfg.layer_sizes = {12};
    cfg.n_classes = 3;
    cfg.seed = 7;
    cfg.rules = {{parse_planted_rule("0 <- 0 & 1 & !2"), parse_planted_rule("1 <- 3 & !4"),
                  parse_planted_rule("2 <- 5 & 6 & 7")}};

    const Dataset a = generate_synthetic(cfg);
    CHECK_NOTHROW(validate(a));
    CHECK(generate_synthetic(cfg) == a);

    SUBCASE("planted bits are recovered by mean thresholds") {
        const auto& norms = a.layer_norms("conv1");
        const auto bits = quantise(norms, compute_thresholds(norms, a.split("train")));
        CHECK(bits == planted_bits(cfg)[0]);
    }

    SUBCASE("teacher evaluates the planted rules") {
        const auto bits = planted_bits(cfg)[0];
        for (std::size_t i = 0; i < a.n_samples(); ++i) {
            const auto b = [&](int k) { return bits.at(i, k) == 1; };
            int want = 2;
            if (b(0) && b(1) && !b(2)) want = 0;
            else if (b(3) && !b(4)) want = 1;
            CHECK(a.teacher[i] == want);
        }
        CHECK(a.labels == a.teacher);
    }

    SUBCASE("splits partition the samples") {
        std::vector<int> seen(a.n_samples(), 0);
        for (const auto& [name, idx] : a.manifest.splits)
            for (auto i : idx) ++seen[i];
        for (int s : seen) CHECK(s == 1);
    }

    SUBCASE("seed changes the data") {
        SynthConfig other = cfg;
        other.seed = 8;
        CHECK_FALSE(generate_synthetic(other) == a);
    }

    SUBCASE("label noise flips some labels only") {
        SynthConfig noisy = cfg;
        noisy.label_noise = 0.2;
        const Dataset n = generate_synthetic(noisy);
        CHECK(n.teacher == a.teacher);
        std::size_t diff = 0;
        for (std::size_t i = 0; i < n.n_samples(); ++i) diff += n.labels[i] != n.teacher[i];
        CHECK(diff > 600);
        CHECK(diff < 1050);
    }
}

TEST_CASE("synth config from json") {
    const auto cfg = parse_synth_config(R"({"n_samples": 64, "layer_sizes": [6, 4], "n_classes": 2, "seed": 3,
        "pattern": "exhaustive",
        "rules": [["0 <- 0 & 1", "3 <- !2"], ["0 <- 0 & 3"]]})");
    CHECK(cfg.n_samples == 64);
    CHECK(cfg.layer_sizes == std::vector<std::size_t>{6, 4});
    CHECK(cfg.pattern == BitPattern::exhaustive);
    REQUIRE(cfg.rules.size() == 2);
    CHECK(cfg.rules[1][0] == parse_planted_rule("0 <- 0 & 3"));
    const Dataset d = generate_synthetic(cfg);
    CHECK(d.manifest.layers.size() == 3);
    const auto bits = planted_bits(cfg)[0];
    for (std::size_t i = 0; i < 64; ++i)
        for (std::size_t k = 0; k < 6; ++k) CHECK((bits.at(i, k) == 1) == bool((i >> k) & 1));

    CHECK_THROWS_AS(parse_synth_config("{"), DataError);
    CHECK_THROWS(parse_synth_config(R"({"rules": [], "pattern": "zigzag"})"));
}
