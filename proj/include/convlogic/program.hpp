#pragma once

#include "convlogic/common.hpp"
#include "convlogic/quantise.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace convlogic {

struct Dataset;

/// A consequent kernel with the training statistics of the leaf that produced it.
/// The statistics order conflicting output classes; they never decide whether a rule fires.
struct Consequent {
    KernelIndex kernel = 0;
    std::uint32_t support = 1;
    std::uint32_t positives = 1;

    bool operator==(const Consequent&) const = default;
};

/// Conjunction of literals over one layer implying positive literals of the next.
/// Antecedents and consequents are kept sorted by kernel, each kernel at most once.
struct Rule {
    std::vector<Condition> antecedents;
    std::vector<Consequent> consequents;

    bool satisfied_by(std::span<const std::int8_t> bits) const;
    bool operator==(const Rule&) const = default;
};

struct RuleSet {
    std::string from_layer;
    std::string to_layer;
    std::vector<Rule> rules;

    bool operator==(const RuleSet&) const = default;
};

struct ExtractionParams {
    std::size_t depth = 5;
    double alpha = 0.01;
    bool demand_driven = true;

    bool operator==(const ExtractionParams&) const = default;
};

/// Layered logic program replacing every layer after the logical entry point.
struct Program {
    // layers.front() is the entry layer, layers.back() the output layer.
    std::vector<std::string> layers;
    std::vector<std::size_t> layer_sizes;
    // rulesets[b] derives layers[b + 1] from layers[b].
    std::vector<RuleSet> rulesets;
    ThresholdVector thresholds;
    std::vector<std::string> class_names;
    ExtractionParams params;

    const std::string& entry_layer() const { return layers.front(); }
    bool operator==(const Program&) const = default;
};

/// Throws DataError on the first structural violation.
void validate(const Program& p);

/// True if entry `a` (class `a.kernel`) beats `b` in output arbitration: higher
/// positives/support, then higher support, then lower class index.
bool outranks(const Consequent& a, const Consequent& b);

/// Merges rules differing in one complementary literal and rules with identical
/// antecedents, to a fixpoint. Class decisions are preserved for every input.
Program simplify(const Program& p);

BitVector infer_layer(std::span<const std::int8_t> bits, const RuleSet& rs, std::size_t next_size);

struct FiredRule {
    std::size_t boundary = 0;
    std::size_t rule = 0;

    bool operator==(const FiredRule&) const = default;
};

struct ClassDecision {
    std::optional<std::uint32_t> cls;  // nullopt: no output rule fired
    bool conflict = false;             // more than one class literal was true
    std::vector<FiredRule> trace;      // every fired rule, shallow boundary first
    std::optional<FiredRule> decisive; // the rule whose consequent won
};

ClassDecision infer(const Program& p, std::span<const std::int8_t> entry_bits);

using Prediction = std::optional<std::uint32_t>;

/// Quantises each sample's entry-layer norms with the program's thresholds, then infers.
std::vector<ClassDecision> decide_samples(const Program& p, const Dataset& d, std::span<const SampleIndex> samples,
                                          unsigned jobs = 1);
std::vector<Prediction> predict_dataset(const Program& p, const Dataset& d, std::string_view split,
                                        unsigned jobs = 1);

class ParseError : public DataError {
public:
    ParseError(std::size_t line, std::size_t column, const std::string& message);
    std::size_t line() const { return line_; }
    std::size_t column() const { return column_; }

private:
    std::size_t line_;
    std::size_t column_;
};

/// Maps a kernel literal to its display name; the default is "<layer>.<kernel>".
using KernelNamer = std::function<std::string(std::string_view layer, KernelIndex kernel)>;

std::string serialise(const Program& p, const KernelNamer& namer = {});
Program parse_program(std::string_view text);
/// Machine-readable export carrying the same fields as the text form.
std::string to_json(const Program& p);

Program load_program(const std::filesystem::path& file);
void save_program(const Program& p, const std::filesystem::path& file);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_real(double v);

} // namespace convlogic
