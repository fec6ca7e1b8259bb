#include "convlogic/induction.hpp"

#include "convlogic/dataset_io.hpp"
#include "convlogic/quantise.hpp"

#include <algorithm>
#include <bit>
#include <set>
#include <stdexcept>

namespace convlogic {

namespace {

using Wide = unsigned __int128;

std::size_t popcount_and(const std::uint64_t* a, const std::uint64_t* b, std::size_t words) {
    std::size_t n = 0;
    for (std::size_t w = 0; w < words; ++w) n += static_cast<std::size_t>(std::popcount(a[w] & b[w]));
    return n;
}

std::size_t popcount_and3(const std::uint64_t* a, const std::uint64_t* b, const std::uint64_t* c,
                          std::size_t words) {
    std::size_t n = 0;
    for (std::size_t w = 0; w < words; ++w) n += static_cast<std::size_t>(std::popcount(a[w] & b[w] & c[w]));
    return n;
}

// Weighted child impurity, up to the common factor 2/n, as num/den:
// p1*q1/n1 + p0*q0/n0 = (p1*q1*n0 + p0*q0*n1) / (n1*n0).
struct Score {
    Wide num;
    Wide den;
};

bool less(const Score& a, const Score& b) { return a.num * b.den < b.num * a.den; }

class Grower {
public:
    Grower(const TrainingTable& table, const InductionParams& params) : table_(table), params_(params) {}

    std::size_t grow(const RowSet& rows, std::size_t splits_above, bool frozen, Tree& tree) {
        const std::size_t index = tree.nodes.size();
        tree.nodes.emplace_back();
        const std::size_t support = table_.count(rows);
        const std::size_t positives = table_.count_positive(rows);
        {
            TreeNode& node = tree.nodes[index];
            node.support = static_cast<std::uint32_t>(support);
            node.positives = static_cast<std::uint32_t>(positives);
            // Modal value; ties go to False.
            node.prediction = 2 * positives > support;
        }
        if (frozen || positives == 0 || positives == support || splits_above >= params_.depth + 1) return index;
        const auto k = best_split(table_, rows);
        if (!k) return index;

        const RowSet on = table_.restrict(rows, *k, true);
        const RowSet off = table_.restrict(rows, *k, false);
        const auto parent = static_cast<double>(support);
        const bool freeze_on = static_cast<double>(table_.count(on)) < params_.alpha * parent;
        const bool freeze_off = static_cast<double>(table_.count(off)) < params_.alpha * parent;
        const std::size_t t = grow(on, splits_above + 1, freeze_on, tree);
        const std::size_t f = grow(off, splits_above + 1, freeze_off, tree);
        TreeNode& node = tree.nodes[index];
        node.split = *k;
        node.on_true = t;
        node.on_false = f;
        return index;
    }

private:
    const TrainingTable& table_;
    const InductionParams& params_;
};

void collect_rules(const Tree& tree, std::size_t index, std::vector<Condition>& path, KernelIndex target,
                   std::vector<Rule>& out) {
    const TreeNode& node = tree.nodes[index];
    if (node.is_leaf()) {
        if (!node.prediction) return;
        Rule r;
        r.antecedents = path;
        std::sort(r.antecedents.begin(), r.antecedents.end());
        r.consequents.push_back({target, node.support, node.positives});
        out.push_back(std::move(r));
        return;
    }
    path.push_back({*node.split, true});
    collect_rules(tree, node.on_true, path, target, out);
    path.back().positive = false;
    collect_rules(tree, node.on_false, path, target, out);
    path.pop_back();
}

void check_params(const InductionParams& params) {
    if (params.depth < 1) throw std::invalid_argument("depth must be at least 1");
    if (!(params.alpha >= 0.0 && params.alpha < 1.0)) throw std::invalid_argument("alpha must lie in [0, 1)");
}

} // namespace

// ---------------------------------------------------------------------------

TrainingTable::TrainingTable(const BitMatrix& features, std::span<const SampleIndex> rows,
                             const std::vector<bool>& target) {
    if (target.size() != rows.size()) throw std::invalid_argument("target length does not match row count");
    pack_features(features, rows);
    for (std::size_t r = 0; r < n_rows_; ++r)
        if (target[r]) target_[r / 64] |= std::uint64_t{1} << (r % 64);
}

TrainingTable::TrainingTable(const BitMatrix& features, std::span<const SampleIndex> rows, const BitMatrix& targets,
                             KernelIndex target_kernel) {
    if (targets.rows != features.rows) throw std::invalid_argument("feature and target matrices differ in rows");
    if (target_kernel >= targets.cols) throw std::invalid_argument("target kernel out of range");
    pack_features(features, rows);
    for (std::size_t r = 0; r < n_rows_; ++r)
        if (targets.at(rows[r], target_kernel) == 1) target_[r / 64] |= std::uint64_t{1} << (r % 64);
}

void TrainingTable::pack_features(const BitMatrix& features, std::span<const SampleIndex> rows) {
    n_rows_ = rows.size();
    n_kernels_ = features.cols;
    words_ = (n_rows_ + 63) / 64;
    columns_.assign(n_kernels_ * words_, 0);
    target_.assign(words_, 0);
    for (std::size_t r = 0; r < n_rows_; ++r) {
        if (rows[r] >= features.rows) throw std::invalid_argument("row index out of range");
        const auto bits = features.row(rows[r]);
        const std::uint64_t mask = std::uint64_t{1} << (r % 64);
        for (std::size_t k = 0; k < n_kernels_; ++k)
            if (bits[k] == 1) columns_[k * words_ + r / 64] |= mask;
    }
}

bool TrainingTable::feature(std::size_t row, KernelIndex k) const {
    return (column(k)[row / 64] >> (row % 64)) & 1u;
}

bool TrainingTable::target(std::size_t row) const { return (target_[row / 64] >> (row % 64)) & 1u; }

RowSet TrainingTable::all_rows() const {
    RowSet s(words_, ~std::uint64_t{0});
    if (n_rows_ % 64) s.back() = (std::uint64_t{1} << (n_rows_ % 64)) - 1;
    return s;
}

RowSet TrainingTable::make_rowset(std::span<const std::size_t> rows) const {
    RowSet s(words_, 0);
    for (auto r : rows) {
        if (r >= n_rows_) throw std::invalid_argument("row out of range");
        s[r / 64] |= std::uint64_t{1} << (r % 64);
    }
    return s;
}

std::size_t TrainingTable::count(const RowSet& s) const {
    std::size_t n = 0;
    for (auto w : s) n += static_cast<std::size_t>(std::popcount(w));
    return n;
}

std::size_t TrainingTable::count_positive(const RowSet& s) const { return popcount_and(s.data(), target_.data(), words_); }

RowSet TrainingTable::restrict(const RowSet& s, KernelIndex k, bool on) const {
    RowSet out(words_);
    const auto* col = column(k);
    for (std::size_t w = 0; w < words_; ++w) out[w] = on ? (s[w] & col[w]) : (s[w] & ~col[w]);
    return out;
}

double gini(std::size_t positives, std::size_t total) {
    if (total == 0) throw std::invalid_argument("gini of an empty node");
    if (positives > total) throw std::invalid_argument("gini: positives exceed total");
    const double p = static_cast<double>(positives) / static_cast<double>(total);
    return 2.0 * p * (1.0 - p);
}

std::optional<KernelIndex> best_split(const TrainingTable& table, const RowSet& node) {
    const std::size_t total = table.count(node);
    const std::size_t pos = table.count_positive(node);
    if (total < 2 || pos == 0 || pos == total) return std::nullopt;
    // Parent impurity on the same scale: pos*neg/total.
    const Score parent{Wide{pos} * (total - pos), Wide{total}};
    std::optional<KernelIndex> best;
    Score best_score{0, 1};
    const std::size_t words = table.words();
    for (KernelIndex k = 0; k < table.kernels(); ++k) {
        const std::size_t n1 = popcount_and(node.data(), table.column(k), words);
        const std::size_t n0 = total - n1;
        if (n1 == 0 || n0 == 0) continue;
        const std::size_t p1 = popcount_and3(node.data(), table.column(k), table.target_bits(), words);
        const std::size_t p0 = pos - p1;
        const Score s{Wide{p1} * (n1 - p1) * n0 + Wide{p0} * (n0 - p0) * n1, Wide{n1} * n0};
        if (!less(s, parent)) continue;
        if (!best || less(s, best_score)) {
            best = k;
            best_score = s;
        }
    }
    return best;
}

bool Tree::predict(std::span<const std::int8_t> bits) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) i = bits[*nodes[i].split] == 1 ? nodes[i].on_true : nodes[i].on_false;
    return nodes[i].prediction;
}

std::size_t Tree::leaf_count() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

Tree grow_tree(const TrainingTable& table, const InductionParams& params) {
    check_params(params);
    if (table.rows() == 0) throw std::invalid_argument("cannot grow a tree from an empty table");
    Tree tree;
    Grower(table, params).grow(table.all_rows(), 0, false, tree);
    return tree;
}

std::vector<Rule> tree_to_rules(const Tree& tree, KernelIndex target) {
    std::vector<Rule> rules;
    std::vector<Condition> path;
    if (!tree.nodes.empty()) collect_rules(tree, 0, path, target, rules);
    return rules;
}

std::vector<Rule> extract_layer(const BitMatrix& previous, const BitMatrix& targets,
                                std::span<const KernelIndex> target_kernels, std::span<const SampleIndex> train,
                                const InductionParams& params, unsigned jobs) {
    check_params(params);
    if (previous.rows != targets.rows) throw std::invalid_argument("layers disagree on sample count");
    std::vector<std::vector<Rule>> per_target(target_kernels.size());
    parallel_for(target_kernels.size(), jobs, [&](std::size_t t) {
        const TrainingTable table(previous, train, targets, target_kernels[t]);
        per_target[t] = tree_to_rules(grow_tree(table, params), target_kernels[t]);
    });
    std::vector<Rule> rules;
    for (auto& v : per_target) std::move(v.begin(), v.end(), std::back_inserter(rules));
    return rules;
}

void check_config(const Dataset& d, const ExtractionConfig& cfg) {
    check_params({cfg.params.depth, cfg.params.alpha});
    const auto& layers = cfg.layers;
    if (layers.size() < 2) throw std::invalid_argument("need an entry layer and the output layer");
    if (layers.back() != kOutputLayer) throw std::invalid_argument("layer list must end with 'output'");
    std::vector<std::size_t> positions;
    for (const auto& name : layers) positions.push_back(d.layer_position(name));
    for (std::size_t i = 0; i + 1 < positions.size(); ++i) {
        if (positions[i + 1] <= positions[i])
            throw std::invalid_argument("layers must be listed shallow to deep without repeats");
        if (i + 2 < positions.size() && positions[i + 1] != positions[i] + 1)
            throw std::invalid_argument("listed layers '" + layers[i] + "' and '" + layers[i + 1] +
                                        "' are not adjacent in the network");
    }
}

Program extract_program(const Dataset& d, const ExtractionConfig& cfg, unsigned jobs) {
    check_config(d, cfg);
    const auto& layers = cfg.layers;
    const auto bits = binarise_dataset(d, layers, jobs);
    const auto train = d.split("train");
    const InductionParams params{cfg.params.depth, cfg.params.alpha};

    Program p;
    p.layers = layers;
    for (const auto& name : layers) p.layer_sizes.push_back(d.layer(name).n_kernels);
    p.class_names = d.manifest.class_names;
    p.params = cfg.params;
    p.thresholds = bits.at(layers.front()).thresholds;
    p.rulesets.resize(layers.size() - 1);

    for (std::size_t b = layers.size() - 1; b-- > 0;) {
        std::vector<KernelIndex> targets;
        const bool output = b + 2 == layers.size();
        if (output || !cfg.params.demand_driven) {
            for (KernelIndex k = 0; k < p.layer_sizes[b + 1]; ++k) targets.push_back(k);
        } else {
            std::set<KernelIndex> wanted;
            for (const auto& r : p.rulesets[b + 1].rules)
                for (const auto& c : r.antecedents) wanted.insert(c.kernel);
            targets.assign(wanted.begin(), wanted.end());
        }
        RuleSet& rs = p.rulesets[b];
        rs.from_layer = layers[b];
        rs.to_layer = layers[b + 1];
        rs.rules = extract_layer(bits.at(layers[b]).bits, bits.at(layers[b + 1]).bits, targets, train, params, jobs);
    }
    validate(p);
    return p;
}

} // namespace convlogic
