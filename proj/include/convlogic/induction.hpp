#pragma once

#include "convlogic/common.hpp"
#include "convlogic/program.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace convlogic {

struct Dataset;

/// Packed membership of table rows (bit r set = row r belongs to the node).
using RowSet = std::vector<std::uint64_t>;

/// Feature bits of layer l-1 and one target kernel of layer l, over a fixed list of
/// samples. Splitting on kernel k sends bit=1 rows to the positive-literal branch and
/// bit=-1 rows to the negative one, so a column stands for both of its literals.
class TrainingTable {
public:
    TrainingTable(const BitMatrix& features, std::span<const SampleIndex> rows, const std::vector<bool>& target);
    /// Target taken from column `target_kernel` of `targets`.
    TrainingTable(const BitMatrix& features, std::span<const SampleIndex> rows, const BitMatrix& targets,
                  KernelIndex target_kernel);

    std::size_t rows() const { return n_rows_; }
    std::size_t kernels() const { return n_kernels_; }
    bool feature(std::size_t row, KernelIndex k) const;
    bool target(std::size_t row) const;

    RowSet all_rows() const;
    RowSet make_rowset(std::span<const std::size_t> rows) const;
    std::size_t count(const RowSet& s) const;
    std::size_t count_positive(const RowSet& s) const;
    /// Rows of `s` whose kernel k bit equals `on`.
    RowSet restrict(const RowSet& s, KernelIndex k, bool on) const;

    const std::uint64_t* column(KernelIndex k) const { return columns_.data() + k * words_; }
    const std::uint64_t* target_bits() const { return target_.data(); }
    std::size_t words() const { return words_; }

private:
    void pack_features(const BitMatrix& features, std::span<const SampleIndex> rows);

    std::size_t n_rows_ = 0;
    std::size_t n_kernels_ = 0;
    std::size_t words_ = 0;
    std::vector<std::uint64_t> columns_;
    std::vector<std::uint64_t> target_;
};

struct InductionParams {
    // A root-to-leaf path carries at most depth + 1 splits, hence antecedents.
    std::size_t depth = 5;
    // A child holding less than this fraction of its parent's rows becomes a leaf.
    double alpha = 0.01;
};

/// Binary gini impurity 2p(1-p). Throws std::invalid_argument if total is 0 or positives > total.
double gini(std::size_t positives, std::size_t total);

/// Kernel minimising the support-weighted gini of the two children, lowest index on ties;
/// nullopt when no split strictly lowers impurity. Comparisons are exact.
std::optional<KernelIndex> best_split(const TrainingTable& table, const RowSet& node);

struct TreeNode {
    std::optional<KernelIndex> split;  // leaf when empty
    std::size_t on_true = 0;           // child for bit 1 (positive literal)
    std::size_t on_false = 0;          // child for bit -1 (negative literal)
    bool prediction = false;
    std::uint32_t support = 0;
    std::uint32_t positives = 0;

    bool is_leaf() const { return !split.has_value(); }
};

struct Tree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    bool predict(std::span<const std::int8_t> bits) const;
    std::size_t leaf_count() const;
};

Tree grow_tree(const TrainingTable& table, const InductionParams& params);

/// One rule per True leaf, its antecedents being the path literals.
std::vector<Rule> tree_to_rules(const Tree& tree, KernelIndex target);

/// Induces rules for each listed target kernel from the training rows. Rules are ordered
/// by target (as listed), then by depth-first leaf order with the positive branch first.
std::vector<Rule> extract_layer(const BitMatrix& previous, const BitMatrix& targets,
                                std::span<const KernelIndex> target_kernels, std::span<const SampleIndex> train,
                                const InductionParams& params, unsigned jobs = 1);

struct ExtractionConfig {
    // Entry layer first, "output" last. Listed convolutional layers must be adjacent in
    // the network; the step to the output may skip layers.
    std::vector<std::string> layers;
    ExtractionParams params;
};

/// Checks layer order and parameters against the dataset; throws std::invalid_argument
/// for a malformed configuration and DataError for unknown layers.
void check_config(const Dataset& d, const ExtractionConfig& cfg);

Program extract_program(const Dataset& d, const ExtractionConfig& cfg, unsigned jobs = 1);

} // namespace convlogic
