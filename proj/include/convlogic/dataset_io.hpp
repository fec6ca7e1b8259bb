#pragma once

#include "convlogic/common.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace convlogic {

/// Name of the final layer; its truth values come from the teacher's predictions.
inline constexpr std::string_view kOutputLayer = "output";

struct LayerMeta {
    std::string name;
    std::size_t n_kernels = 0;
    bool pooled = false;
    // Relative path of the norm file. May be empty for the output layer.
    std::string file;

    bool operator==(const LayerMeta&) const = default;
};

struct Manifest {
    int version = 1;
    std::size_t n_samples = 0;
    std::vector<std::string> class_names;
    std::map<std::string, std::vector<SampleIndex>> splits;
    // Shallow to deep; the last entry is always the output layer.
    std::vector<LayerMeta> layers;
    std::optional<std::vector<std::string>> image_refs;
    // Free-form exporter notes (preprocessing and so on), carried through untouched.
    std::map<std::string, std::string> metadata;

    bool operator==(const Manifest&) const = default;
};

struct Dataset {
    Manifest manifest;
    std::map<std::string, NormMatrix> norms;
    std::vector<std::uint16_t> labels;
    std::vector<std::uint16_t> teacher;

    std::size_t n_samples() const { return manifest.n_samples; }
    std::size_t n_classes() const { return manifest.class_names.size(); }

    const LayerMeta& layer(std::string_view name) const;
    std::size_t layer_position(std::string_view name) const;
    const NormMatrix& layer_norms(std::string_view name) const;
    /// Indices of a split; an unknown split name is a DataError.
    std::span<const SampleIndex> split(std::string_view name) const;

    bool operator==(const Dataset&) const = default;
};

/// Throws DataError describing the first violated invariant.
void validate(const Dataset& d);

Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const Dataset& d, const std::filesystem::path& dir);

// Binary pieces, exposed for tools and tests.
void write_norm_file(const NormMatrix& m, const std::filesystem::path& file);
NormMatrix read_norm_file(const std::filesystem::path& file);
void write_class_file(std::span<const std::uint16_t> values, std::string_view magic,
                      const std::filesystem::path& file);
std::vector<std::uint16_t> read_class_file(const std::filesystem::path& file, std::string_view magic);

/// True iff `name` is usable as a layer or class name in program text.
bool is_identifier(std::string_view name);

// ---------------------------------------------------------------------------
// Synthetic teacher

/// `target <- antecedents` between two adjacent planted layers.
struct PlantedRule {
    KernelIndex target = 0;
    std::vector<Condition> antecedents;

    bool operator==(const PlantedRule&) const = default;
};

enum class BitPattern {
    random,     // first layer bits are fair coin flips
    exhaustive, // sample i carries the binary expansion of i mod 2^K
};

struct SynthConfig {
    std::size_t n_samples = 1000;
    // Convolutional layer widths, shallow to deep. The output layer is implicit.
    std::vector<std::size_t> layer_sizes{12};
    std::size_t n_classes = 3;
    std::uint64_t seed = 0;
    // One list per boundary: rules[b] derives layer b+1 (or the output) from layer b.
    // Hidden kernels without rules are independent noise. The teacher predicts the
    // lowest-index class with a firing rule, else the last class.
    std::vector<std::vector<PlantedRule>> rules;
    double train_fraction = 0.6;
    double val_fraction = 0.2;
    // Probability that a ground-truth label differs from the teacher's prediction.
    double label_noise = 0.0;
    BitPattern pattern = BitPattern::random;
    std::vector<std::string> layer_names;  // default conv1..convN
    std::vector<std::string> class_names;  // default class0..classC-1
};

/// Deterministic in `cfg`. Norms are built so that mean-thresholding the training split
/// recovers the planted bits exactly; a column that cannot be recovered is a DataError.
Dataset generate_synthetic(const SynthConfig& cfg);

/// The planted bits of every convolutional layer, as generated (for oracles).
std::vector<BitMatrix> planted_bits(const SynthConfig& cfg);

/// Parses a JSON synth config. Rules are strings such as "2 <- 0 & !5".
SynthConfig parse_synth_config(std::string_view json_text);
PlantedRule parse_planted_rule(std::string_view text);

} // namespace convlogic
