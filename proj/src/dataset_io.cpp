#include "convlogic/dataset_io.hpp"

#include "convlogic/quantise.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace convlogic {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint32_t kNormVersion = 1;
constexpr std::string_view kNormMagic = "EATN";
constexpr std::string_view kLabelMagic = "EATL";
constexpr std::string_view kTeacherMagic = "EATP";
constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kLabelsFile = "labels.bin";
constexpr const char* kTeacherFile = "teacher.bin";

void put_u32(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b.data(), 4);
}

void put_u16(std::ostream& out, std::uint16_t v) {
    const std::array<char, 2> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    out.write(b.data(), 2);
}

std::uint32_t get_u32(std::istream& in, const fs::path& file) {
    std::array<unsigned char, 4> b{};
    in.read(reinterpret_cast<char*>(b.data()), 4);
    if (!in) throw DataError("truncated file " + file.string());
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

std::uint16_t get_u16(std::istream& in, const fs::path& file) {
    std::array<unsigned char, 2> b{};
    in.read(reinterpret_cast<char*>(b.data()), 2);
    if (!in) throw DataError("truncated file " + file.string());
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

void expect_magic(std::istream& in, std::string_view magic, const fs::path& file) {
    std::array<char, 4> b{};
    in.read(b.data(), 4);
    if (!in || std::string_view(b.data(), 4) != magic)
        throw DataError("bad magic bytes in " + file.string() + " (expected " + std::string(magic) + ")");
}

void expect_eof(std::istream& in, const fs::path& file) {
    if (in.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes in " + file.string());
}

std::ofstream open_out(const fs::path& file) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + file.string() + " for writing");
    return out;
}

std::ifstream open_in(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open " + file.string());
    return in;
}

void finish(std::ofstream& out, const fs::path& file) {
    out.flush();
    if (!out) throw IoError("write failed for " + file.string());
}

// -- manifest <-> json ------------------------------------------------------

json manifest_to_json(const Manifest& m) {
    json j;
    j["version"] = m.version;
    j["n_samples"] = m.n_samples;
    j["class_names"] = m.class_names;
    json splits = json::object();
    for (const auto& [name, idx] : m.splits) splits[name] = idx;
    j["splits"] = splits;
    json layers = json::array();
    for (const auto& l : m.layers)
        layers.push_back({{"name", l.name}, {"n_kernels", l.n_kernels}, {"pooled", l.pooled}, {"file", l.file}});
    j["layers"] = layers;
    if (m.image_refs) j["image_refs"] = *m.image_refs;
    if (!m.metadata.empty()) j["metadata"] = m.metadata;
    return j;
}

Manifest manifest_from_json(const json& j) {
    Manifest m;
    try {
        m.version = j.at("version").get<int>();
        m.n_samples = j.at("n_samples").get<std::size_t>();
        m.class_names = j.at("class_names").get<std::vector<std::string>>();
        for (const auto& [name, idx] : j.at("splits").items())
            m.splits[name] = idx.get<std::vector<SampleIndex>>();
        for (const auto& l : j.at("layers")) {
            LayerMeta meta;
            meta.name = l.at("name").get<std::string>();
            meta.n_kernels = l.at("n_kernels").get<std::size_t>();
            meta.pooled = l.value("pooled", false);
            meta.file = l.value("file", std::string{});
            m.layers.push_back(std::move(meta));
        }
        if (j.contains("image_refs")) m.image_refs = j.at("image_refs").get<std::vector<std::string>>();
        if (j.contains("metadata")) m.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed manifest: ") + e.what());
    }
    return m;
}

// -- synthetic generator ----------------------------------------------------

using Rng = std::mt19937_64;

// Explicit mappings keep the stream identical across standard libraries.
double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    for (;;) {
        const std::uint64_t x = rng();
        if (x < limit) return x % n;
    }
}

bool fires(const PlantedRule& r, std::span<const std::int8_t> bits) {
    return std::all_of(r.antecedents.begin(), r.antecedents.end(),
                       [&](const Condition& c) { return (bits[c.kernel] == 1) == c.positive; });
}

void check_synth_config(const SynthConfig& cfg) {
    if (cfg.n_samples == 0) throw DataError("synth: n_samples must be positive");
    if (cfg.layer_sizes.empty()) throw DataError("synth: at least one layer is required");
    if (cfg.n_classes < 2) throw DataError("synth: at least two classes are required");
    if (cfg.n_classes > 65535) throw DataError("synth: too many classes");
    for (auto k : cfg.layer_sizes)
        if (k == 0) throw DataError("synth: layer sizes must be positive");
    if (cfg.rules.size() != cfg.layer_sizes.size())
        throw DataError("synth: expected one rule list per layer boundary (" +
                        std::to_string(cfg.layer_sizes.size()) + ")");
    for (std::size_t b = 0; b < cfg.rules.size(); ++b) {
        const std::size_t from = cfg.layer_sizes[b];
        const std::size_t to = b + 1 < cfg.layer_sizes.size() ? cfg.layer_sizes[b + 1] : cfg.n_classes;
        for (const auto& r : cfg.rules[b]) {
            if (r.target >= to)
                throw DataError("synth: rule references undeclared kernel " + std::to_string(r.target) +
                                " in boundary " + std::to_string(b));
            for (const auto& c : r.antecedents)
                if (c.kernel >= from)
                    throw DataError("synth: rule references undeclared kernel " + std::to_string(c.kernel) +
                                    " in boundary " + std::to_string(b));
        }
    }
    if (!(cfg.train_fraction > 0.0) || cfg.val_fraction < 0.0 || cfg.train_fraction + cfg.val_fraction > 1.0)
        throw DataError("synth: split fractions must satisfy 0 < train, 0 <= val, train + val <= 1");
    if (cfg.label_noise < 0.0 || cfg.label_noise > 1.0) throw DataError("synth: label_noise must be in [0, 1]");
    if (!cfg.layer_names.empty() && cfg.layer_names.size() != cfg.layer_sizes.size())
        throw DataError("synth: layer_names must match layer_sizes");
    if (!cfg.class_names.empty() && cfg.class_names.size() != cfg.n_classes)
        throw DataError("synth: class_names must match n_classes");
}

struct Generated {
    Dataset dataset;
    std::vector<BitMatrix> bits;
};

Generated generate(const SynthConfig& cfg) {
    check_synth_config(cfg);
    Rng rng(cfg.seed);
    const std::size_t n = cfg.n_samples;
    Generated g;
    Manifest& m = g.dataset.manifest;
    m.n_samples = n;

    for (std::size_t c = 0; c < cfg.n_classes; ++c)
        m.class_names.push_back(cfg.class_names.empty() ? "class" + std::to_string(c) : cfg.class_names[c]);

    // Splits: a seeded permutation cut by the configured fractions.
    std::vector<SampleIndex> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<SampleIndex>(i);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
    const auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(n)));
    const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(n))));
    auto take = [&](std::size_t from, std::size_t count) {
        std::vector<SampleIndex> v(perm.begin() + static_cast<std::ptrdiff_t>(from),
                                   perm.begin() + static_cast<std::ptrdiff_t>(from + count));
        std::sort(v.begin(), v.end());
        return v;
    };
    m.splits["train"] = take(0, n_train);
    m.splits["val"] = take(n_train, n_val);
    m.splits["test"] = take(n_train + n_val, n - n_train - n_val);

    // Planted bits, shallow to deep.
    const std::size_t n_layers = cfg.layer_sizes.size();
    g.bits.reserve(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        const std::size_t k_count = cfg.layer_sizes[l];
        BitMatrix bits(n, k_count);
        if (l == 0) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < k_count; ++k) {
                    bool on = false;
                    if (cfg.pattern == BitPattern::exhaustive)
                        on = k < 64 && ((static_cast<std::uint64_t>(i) >> k) & 1u);
                    else
                        on = (rng() >> 63) != 0;
                    bits.at(i, k) = on ? 1 : -1;
                }
        } else {
            const auto& rules = cfg.rules[l - 1];
            std::vector<bool> derived(k_count, false);
            for (const auto& r : rules) derived[r.target] = true;
            for (std::size_t i = 0; i < n; ++i) {
                const auto prev = g.bits[l - 1].row(i);
                for (std::size_t k = 0; k < k_count; ++k) {
                    if (derived[k]) continue;
                    bits.at(i, k) = (rng() >> 63) != 0 ? 1 : -1;
                }
                for (const auto& r : rules)
                    if (fires(r, prev)) bits.at(i, r.target) = 1;
            }
        }
        g.bits.push_back(std::move(bits));
    }

    // Teacher and labels.
    g.dataset.teacher.resize(n);
    g.dataset.labels.resize(n);
    const auto& out_rules = cfg.rules.back();
    for (std::size_t i = 0; i < n; ++i) {
        const auto prev = g.bits.back().row(i);
        std::size_t cls = cfg.n_classes - 1;
        for (const auto& r : out_rules)
            if (r.target < cls && fires(r, prev)) cls = r.target;
        g.dataset.teacher[i] = static_cast<std::uint16_t>(cls);
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t label = g.dataset.teacher[i];
        if (cfg.label_noise > 0.0 && uniform01(rng) < cfg.label_noise)
            label = (label + 1 + uniform_index(rng, cfg.n_classes - 1)) % cfg.n_classes;
        g.dataset.labels[i] = static_cast<std::uint16_t>(label);
    }

    // Norms: a low and a high level per kernel. Jitter pushes values away from the gap,
    // and is only applied when the training positive rate keeps the mean inside the gap.
    const auto& train = m.splits["train"];
    for (std::size_t l = 0; l < n_layers; ++l) {
        const BitMatrix& bits = g.bits[l];
        const std::string name = cfg.layer_names.empty() ? "conv" + std::to_string(l + 1) : cfg.layer_names[l];
        NormMatrix norms(n, bits.cols);
        for (std::size_t k = 0; k < bits.cols; ++k) {
            const double lo = 0.5 + 1.5 * uniform01(rng);
            const double gap = 0.5 + 1.5 * uniform01(rng);
            std::size_t train_pos = 0;
            for (auto i : train) train_pos += bits.at(i, k) == 1;
            const double rate = static_cast<double>(train_pos) / static_cast<double>(train.size());
            const double amp = (rate >= 0.25 && rate <= 0.75) ? 0.25 * gap : 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double u = uniform01(rng) * amp;
                norms.at(i, k) = static_cast<float>(bits.at(i, k) == 1 ? lo + gap + u : lo - u);
            }
        }
        const auto theta = compute_thresholds(norms, train);
        if (quantise(norms, theta) != bits) {
            for (std::size_t k = 0; k < bits.cols; ++k) {
                bool all_on = true;
                for (auto i : train) all_on = all_on && bits.at(i, k) == 1;
                if (all_on)
                    throw DataError("synth: planted kernel " + name + "." + std::to_string(k) +
                                    " is true on every training sample and cannot be recovered by mean thresholding");
            }
            throw DataError("synth: planted bits of layer " + name + " are not recoverable");
        }
        m.layers.push_back({name, bits.cols, false, name + ".norms"});
        g.dataset.norms.emplace(name, std::move(norms));
    }
    m.layers.push_back({std::string(kOutputLayer), cfg.n_classes, false, ""});
    m.metadata["generator"] = "synthetic";
    m.metadata["seed"] = std::to_string(cfg.seed);
    validate(g.dataset);
    return g;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

KernelIndex parse_index(std::string_view s, std::string_view whole) {
    const std::string t = trim(s);
    if (t.empty() || !std::all_of(t.begin(), t.end(), [](unsigned char c) { return std::isdigit(c); }))
        throw DataError("synth: bad kernel index in rule '" + std::string(whole) + "'");
    return static_cast<KernelIndex>(std::stoul(t));
}

} // namespace

// ---------------------------------------------------------------------------

const LayerMeta& Dataset::layer(std::string_view name) const { return manifest.layers[layer_position(name)]; }

std::size_t Dataset::layer_position(std::string_view name) const {
    for (std::size_t i = 0; i < manifest.layers.size(); ++i)
        if (manifest.layers[i].name == name) return i;
    throw DataError("unknown layer '" + std::string(name) + "'");
}

const NormMatrix& Dataset::layer_norms(std::string_view name) const {
    const auto it = norms.find(std::string(name));
    if (it == norms.end()) throw DataError("no norms stored for layer '" + std::string(name) + "'");
    return it->second;
}

std::span<const SampleIndex> Dataset::split(std::string_view name) const {
    const auto it = manifest.splits.find(std::string(name));
    if (it == manifest.splits.end()) throw DataError("unknown split '" + std::string(name) + "'");
    return it->second;
}

bool is_identifier(std::string_view name) {
    if (name.empty()) return false;
    const auto head = static_cast<unsigned char>(name.front());
    if (!(std::isalpha(head) || head == '_')) return false;
    return std::all_of(name.begin(), name.end(), [](unsigned char c) { return std::isalnum(c) || c == '_' || c == '-'; });
}

void validate(const Dataset& d) {
    const Manifest& m = d.manifest;
    const std::size_t n = m.n_samples;
    if (m.version != 1) throw DataError("unsupported manifest version " + std::to_string(m.version));
    if (m.class_names.size() < 2) throw DataError("manifest needs at least two classes");
    std::set<std::string> seen;
    for (const auto& c : m.class_names) {
        if (!is_identifier(c)) throw DataError("class name '" + c + "' is not an identifier");
        if (!seen.insert(c).second) throw DataError("duplicate class name '" + c + "'");
    }
    if (m.layers.empty() || m.layers.back().name != kOutputLayer)
        throw DataError("manifest layers must end with the '" + std::string(kOutputLayer) + "' layer");
    if (m.layers.back().n_kernels != m.class_names.size())
        throw DataError("output layer kernel count does not match class count");
    seen.clear();
    for (const auto& l : m.layers) {
        if (!is_identifier(l.name)) throw DataError("layer name '" + l.name + "' is not an identifier");
        if (!seen.insert(l.name).second) throw DataError("duplicate layer name '" + l.name + "'");
        if (l.n_kernels == 0) throw DataError("layer '" + l.name + "' has no kernels");
        const bool is_output = l.name == kOutputLayer;
        if (l.file.empty()) {
            if (!is_output) throw DataError("layer '" + l.name + "' has no norm file");
            if (d.norms.count(l.name)) throw DataError("norms present for output layer without a file entry");
            continue;
        }
        const auto it = d.norms.find(l.name);
        if (it == d.norms.end()) throw DataError("missing norms for layer '" + l.name + "'");
        const NormMatrix& nm = it->second;
        if (nm.rows != n || nm.cols != l.n_kernels || nm.values.size() != nm.rows * nm.cols)
            throw DataError("shape mismatch for layer '" + l.name + "': file has " + std::to_string(nm.rows) + "x" +
                            std::to_string(nm.cols) + ", manifest declares " + std::to_string(n) + "x" +
                            std::to_string(l.n_kernels));
        for (float v : nm.values) {
            if (!std::isfinite(v)) throw DataError("non-finite norm in layer '" + l.name + "'");
            if (v < 0.0f) throw DataError("negative norm in layer '" + l.name + "'");
        }
    }
    for (const auto& [name, _] : d.norms)
        if (!seen.count(name)) throw DataError("norms for undeclared layer '" + name + "'");
    std::vector<bool> used(n, false);
    for (const auto& [name, idx] : m.splits) {
        for (auto i : idx) {
            if (i >= n) throw DataError("split '" + name + "' index " + std::to_string(i) + " out of range");
            if (used[i]) throw DataError("sample " + std::to_string(i) + " appears in more than one split entry");
            used[i] = true;
        }
    }
    if (m.image_refs && m.image_refs->size() != n) throw DataError("image_refs length does not match n_samples");
    if (d.labels.size() != n) throw DataError("shape mismatch: labels file has " + std::to_string(d.labels.size()) + " entries");
    if (d.teacher.size() != n) throw DataError("shape mismatch: teacher file has " + std::to_string(d.teacher.size()) + " entries");
    const std::size_t classes = m.class_names.size();
    for (auto v : d.labels)
        if (v >= classes) throw DataError("label " + std::to_string(v) + " out of range");
    for (auto v : d.teacher)
        if (v >= classes) throw DataError("teacher prediction " + std::to_string(v) + " out of range");
}

void write_norm_file(const NormMatrix& m, const fs::path& file) {
    auto out = open_out(file);
    out.write(kNormMagic.data(), 4);
    put_u32(out, kNormVersion);
    put_u32(out, static_cast<std::uint32_t>(m.rows));
    put_u32(out, static_cast<std::uint32_t>(m.cols));
    for (float v : m.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
    finish(out, file);
}

NormMatrix read_norm_file(const fs::path& file) {
    auto in = open_in(file);
    expect_magic(in, kNormMagic, file);
    const auto version = get_u32(in, file);
    if (version != kNormVersion) throw DataError("unsupported norm file version in " + file.string());
    const auto rows = get_u32(in, file);
    const auto cols = get_u32(in, file);
    NormMatrix m(rows, cols);
    for (auto& v : m.values) v = std::bit_cast<float>(get_u32(in, file));
    expect_eof(in, file);
    return m;
}

void write_class_file(std::span<const std::uint16_t> values, std::string_view magic, const fs::path& file) {
    auto out = open_out(file);
    out.write(magic.data(), 4);
    put_u32(out, static_cast<std::uint32_t>(values.size()));
    for (auto v : values) put_u16(out, v);
    finish(out, file);
}

std::vector<std::uint16_t> read_class_file(const fs::path& file, std::string_view magic) {
    auto in = open_in(file);
    expect_magic(in, magic, file);
    const auto n = get_u32(in, file);
    std::vector<std::uint16_t> values(n);
    for (auto& v : values) v = get_u16(in, file);
    expect_eof(in, file);
    return values;
}

Dataset load_dataset(const fs::path& dir) {
    Dataset d;
    {
        auto in = open_in(dir / kManifestFile);
        std::stringstream text;
        text << in.rdbuf();
        json j;
        try {
            j = json::parse(text.str());
        } catch (const json::parse_error& e) {
            throw DataError(std::string("malformed manifest: ") + e.what());
        }
        d.manifest = manifest_from_json(j);
    }
    for (const auto& l : d.manifest.layers) {
        if (l.file.empty()) continue;
        d.norms.emplace(l.name, read_norm_file(dir / l.file));
    }
    d.labels = read_class_file(dir / kLabelsFile, kLabelMagic);
    d.teacher = read_class_file(dir / kTeacherFile, kTeacherMagic);
    validate(d);
    return d;
}

void save_dataset(const Dataset& d, const fs::path& dir) {
    validate(d);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    {
        auto out = open_out(dir / kManifestFile);
        out << manifest_to_json(d.manifest).dump(2) << '\n';
        finish(out, dir / kManifestFile);
    }
    for (const auto& l : d.manifest.layers)
        if (!l.file.empty()) write_norm_file(d.norms.at(l.name), dir / l.file);
    write_class_file(d.labels, kLabelMagic, dir / kLabelsFile);
    write_class_file(d.teacher, kTeacherMagic, dir / kTeacherFile);
}

Dataset generate_synthetic(const SynthConfig& cfg) { return generate(cfg).dataset; }

std::vector<BitMatrix> planted_bits(const SynthConfig& cfg) { return generate(cfg).bits; }

PlantedRule parse_planted_rule(std::string_view text) {
    const auto arrow = text.find("<-");
    if (arrow == std::string_view::npos) throw DataError("synth: rule '" + std::string(text) + "' has no '<-'");
    PlantedRule r;
    r.target = parse_index(text.substr(0, arrow), text);
    std::string_view body = text.substr(arrow + 2);
    if (trim(body) == "true") return r;
    std::size_t pos = 0;
    while (pos <= body.size()) {
        const auto amp = body.find('&', pos);
        std::string lit = trim(body.substr(pos, amp == std::string_view::npos ? std::string_view::npos : amp - pos));
        Condition c;
        if (!lit.empty() && lit.front() == '!') {
            c.positive = false;
            lit.erase(0, 1);
        }
        c.kernel = parse_index(lit, text);
        r.antecedents.push_back(c);
        if (amp == std::string_view::npos) break;
        pos = amp + 1;
    }
    return r;
}

SynthConfig parse_synth_config(std::string_view json_text) {
    SynthConfig cfg;
    try {
        const json j = json::parse(json_text);
        cfg.n_samples = j.value("n_samples", cfg.n_samples);
        cfg.layer_sizes = j.value("layer_sizes", cfg.layer_sizes);
        cfg.n_classes = j.value("n_classes", cfg.n_classes);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.train_fraction = j.value("train_fraction", cfg.train_fraction);
        cfg.val_fraction = j.value("val_fraction", cfg.val_fraction);
        cfg.label_noise = j.value("label_noise", cfg.label_noise);
        cfg.layer_names = j.value("layer_names", cfg.layer_names);
        cfg.class_names = j.value("class_names", cfg.class_names);
        const std::string pattern = j.value("pattern", std::string("random"));
        if (pattern == "random")
            cfg.pattern = BitPattern::random;
        else if (pattern == "exhaustive")
            cfg.pattern = BitPattern::exhaustive;
        else
            throw DataError("synth: unknown pattern '" + pattern + "'");
        for (const auto& boundary : j.at("rules")) {
            std::vector<PlantedRule> rules;
            for (const auto& r : boundary) rules.push_back(parse_planted_rule(r.get<std::string>()));
            cfg.rules.push_back(std::move(rules));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed synth config: ") + e.what());
    }
    return cfg;
}

} // namespace convlogic
