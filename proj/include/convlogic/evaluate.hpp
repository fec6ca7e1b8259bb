#pragma once

#include "convlogic/induction.hpp"
#include "convlogic/program.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace convlogic {

struct Dataset;

/// A rate over a split; nullopt marks an empty split, where the rate is undefined.
using Fraction = std::optional<double>;

/// Share of predictions equal to the reference. Abstentions never match.
Fraction accuracy(std::span<const Prediction> predictions, std::span<const std::uint16_t> labels);
Fraction fidelity(std::span<const Prediction> predictions, std::span<const std::uint16_t> teacher);

struct ProgramStats {
    std::size_t n_rules = 0;
    // Distinct kernels (any polarity) in antecedents or consequents, across all layers.
    std::size_t n_vars = 0;
    // Distinct literals, counting a kernel's positive and negative forms separately.
    std::size_t n_vars_polarity = 0;
    // Total antecedent occurrences.
    std::size_t size = 0;

    bool operator==(const ProgramStats&) const = default;
};

ProgramStats program_stats(const Program& p);

struct SplitMetrics {
    std::string split;
    std::size_t samples = 0;
    Fraction accuracy;
    Fraction fidelity;
    Fraction abstain_rate;
    Fraction conflict_rate;
    Fraction teacher_accuracy;
};

SplitMetrics evaluate_split(const Program& p, const Dataset& d, const std::string& split, unsigned jobs = 1);

struct SweepSpec {
    std::vector<std::string> leps;
    std::vector<std::size_t> depths{1, 2, 3, 4, 5};
    // Unset: 0.01 for a single boundary, 0.1 when several are chained.
    std::optional<double> alpha;
    // false: each entry layer maps straight to the output. true: every convolutional layer
    // from the entry layer to the deepest one is chained.
    bool chain = false;
    bool demand_driven = true;
    std::vector<std::string> splits{"train", "val", "test"};
};

struct SweepCell {
    std::string lep;
    std::size_t depth = 0;
    double alpha = 0.0;
    std::vector<std::string> layers;
    std::optional<std::string> error;
    Program extracted;
    Program simplified;
    ProgramStats stats;  // of the simplified program
    std::vector<SplitMetrics> splits;
};

struct SweepGrid {
    SweepSpec spec;
    std::vector<SweepCell> cells;  // lep-major, then depth
};

double default_alpha(std::size_t boundaries);
std::vector<std::string> sweep_layers(const Dataset& d, const std::string& lep, bool chain);

/// Extracts, simplifies and evaluates every (lep, depth) cell. A failing cell is recorded
/// and the sweep goes on. The result does not depend on `jobs`.
SweepGrid run_sweep(const Dataset& d, const SweepSpec& spec, unsigned jobs = 1);

inline constexpr const char* kSweepCsvHeader =
    "lep,depth,alpha,split,accuracy,fidelity,abstain,rules,vars,vars_polarity,size";

std::string sweep_csv(const SweepGrid& grid);
/// Teacher vs program accuracies per split, their gap, and program statistics.
std::string sweep_table(const SweepGrid& grid);
std::string format_fraction(const Fraction& f, int decimals = 6);

} // namespace convlogic
