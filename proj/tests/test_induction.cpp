#include "convlogic/induction.hpp"

#include "convlogic/dataset_io.hpp"
#include "convlogic/quantise.hpp"
#include "oracle.hpp"

#include <doctest.h>

#include <numeric>
#include <random>
#include <map>
#include <set>

using namespace convlogic;

namespace {

std::vector<SampleIndex> iota_rows(std::size_t n) {
    std::vector<SampleIndex> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

TrainingTable make_table(const oracle::Table& t) {
    return TrainingTable(oracle::features(t), iota_rows(t.y.size()), t.y);
}

oracle::Table random_table(std::mt19937_64& rng, std::size_t n, std::size_t k) {
    oracle::Table t;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<bool> row(k);
        for (std::size_t j = 0; j < k; ++j) row[j] = rng() & 1;
        t.x.push_back(row);
        t.y.push_back(rng() & 1);
    }
    return t;
}

// Table over all 2^k assignments with target f.
template <typename F>
oracle::Table exhaustive(std::size_t k, F f) {
    oracle::Table t;
    for (std::size_t m = 0; m < (std::size_t{1} << k); ++m) {
        std::vector<bool> row(k);
        for (std::size_t j = 0; j < k; ++j) row[j] = (m >> j) & 1;
        t.y.push_back(f(row));
        t.x.push_back(row);
    }
    return t;
}

} // namespace

TEST_CASE("gini") {
    CHECK(gini(2, 4) == 0.5);
    CHECK(gini(4, 4) == 0.0);
    CHECK(gini(0, 7) == 0.0);
    CHECK(gini(1, 3) == doctest::Approx(4.0 / 9.0));
    CHECK_THROWS_AS(gini(0, 0), std::invalid_argument);
    CHECK_THROWS_AS(gini(3, 2), std::invalid_argument);
}

TEST_CASE("best_split basics") {
    std::mt19937_64 rng(1);
    auto t = random_table(rng, 12, 5);
    for (std::size_t i = 0; i < 12; ++i) t.y[i] = t.x[i][3];
    if (std::count(t.y.begin(), t.y.end(), true) % 12 == 0) t.x[0][3] = t.y[0] = !t.y[0];
    const auto table = make_table(t);
    CHECK(best_split(table, table.all_rows()) == 3u);

    // kernels 1 and 2 identical: the lower wins
    oracle::Table tie;
    tie.x = {{false, true, true}, {false, false, false}, {true, true, true}, {true, false, false}};
    tie.y = {true, false, true, false};
    const auto tt = make_table(tie);
    CHECK(best_split(tt, tt.all_rows()) == 1u);

    // pure node, single row, useless features
    oracle::Table pure;
    pure.x = {{true}, {false}};
    pure.y = {true, true};
    CHECK_FALSE(best_split(make_table(pure), make_table(pure).all_rows()));
    oracle::Table flat;
    flat.x = {{true}, {true}};
    flat.y = {true, false};
    CHECK_FALSE(best_split(make_table(flat), make_table(flat).all_rows()));
}

TEST_CASE("best_split matches brute force on random tables and subsets") {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 2 + rng() % 40, k = 1 + rng() % 6;
        const auto t = random_table(rng, n, k);
        const auto table = make_table(t);
        std::vector<std::size_t> subset;
        for (std::size_t r = 0; r < n; ++r)
            if (rng() % 4) subset.push_back(r);
        const auto got = best_split(table, table.make_rowset(subset));
        const auto want = oracle::best_split(t, subset);
        CHECK(got == want);
    }
}

TEST_CASE("bitset table spans several words") {
    std::mt19937_64 rng(9);
    const auto t = random_table(rng, 200, 7);
    const auto table = make_table(t);
    CHECK(table.rows() == 200);
    CHECK(table.words() == 4);
    std::size_t pos = 0;
    for (bool b : t.y) pos += b;
    CHECK(table.count_positive(table.all_rows()) == pos);
    for (std::size_t r = 0; r < 200; ++r) {
        CHECK(table.target(r) == t.y[r]);
        for (KernelIndex j = 0; j < 7; ++j) CHECK(table.feature(r, j) == t.x[r][j]);
    }
    std::vector<std::size_t> all(200);
    std::iota(all.begin(), all.end(), 0);
    CHECK(best_split(table, table.all_rows()) == oracle::best_split(t, all));
}

TEST_CASE("tree for k1 and not k2") {
    const auto t = exhaustive(3, [](const std::vector<bool>& r) { return r[1] && !r[2]; });
    const auto tree = grow_tree(make_table(t), {2, 0.0});
    for (std::size_t i = 0; i < t.y.size(); ++i) {
        std::vector<std::int8_t> bits;
        for (bool b : t.x[i]) bits.push_back(b ? 1 : -1);
        CHECK(tree.predict(bits) == t.y[i]);
    }
    const auto rules = tree_to_rules(tree, 7);
    REQUIRE(rules.size() == 1);
    CHECK(rules[0].antecedents == std::vector<Condition>{{1, true}, {2, false}});
    REQUIRE(rules[0].consequents.size() == 1);
    CHECK(rules[0].consequents[0] == Consequent{7, 2, 2});
}

TEST_CASE("degenerate trees") {
    oracle::Table t;
    t.x = {{true}, {false}, {true}};
    t.y = {true, true, true};
    const auto all_true = grow_tree(make_table(t), {});
    CHECK(all_true.nodes.size() == 1);
    const auto r = tree_to_rules(all_true, 0);
    REQUIRE(r.size() == 1);
    CHECK(r[0].antecedents.empty());

    t.y = {false, false, false};
    CHECK(tree_to_rules(grow_tree(make_table(t), {}), 0).empty());

    // tie at a leaf predicts False
    t.x = {{true}, {true}};
    t.y = {true, false};
    const auto tied = grow_tree(make_table(t), {});
    CHECK(tied.nodes.size() == 1);
    CHECK_FALSE(tied.nodes[0].prediction);

    CHECK_THROWS_AS(grow_tree(make_table(oracle::Table{}), {}), std::invalid_argument);
    CHECK_THROWS_AS(grow_tree(make_table(t), {0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(grow_tree(make_table(t), {3, 1.0}), std::invalid_argument);
}

TEST_CASE("alpha freezes a small child") {
    // kernel 0 sends 3 of 10 rows to its true side; kernel 1 separates those three
    oracle::Table t;
    t.x = {{true, true}, {true, true}, {true, false}, {false, true}, {false, true},
           {false, true}, {false, false}, {false, false}, {false, false}, {false, false}};
    t.y = {true, true, false, false, false, false, false, false, false, false};
    const auto loose = grow_tree(make_table(t), {5, 0.0});
    const auto tight = grow_tree(make_table(t), {5, 0.4});
    REQUIRE(tight.nodes[0].split.has_value());
    CHECK(tight.nodes[0].split == 0u);
    const auto& small = tight.nodes[tight.nodes[0].on_true];
    CHECK(small.support == 3);
    CHECK(small.is_leaf());
    CHECK(small.positives == 2);
    CHECK(small.prediction);
    CHECK(tight.nodes.size() == 3);
    CHECK(loose.nodes.size() == 5);
}

TEST_CASE("grow_tree matches the reference grower") {
    std::mt19937_64 rng(77);
    const double alphas[] = {0.0, 0.05, 0.2, 0.45};
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng() % 60, k = 1 + rng() % 6;
        const auto t = random_table(rng, n, k);
        const std::size_t depth = 1 + rng() % 5;
        const double alpha = alphas[rng() % 4];
        const auto tree = grow_tree(make_table(t), {depth, alpha});
        std::vector<oracle::Node> want;
        std::vector<std::size_t> rows(n);
        std::iota(rows.begin(), rows.end(), 0);
        oracle::grow(t, rows, depth, alpha, 0, false, want);
        REQUIRE(tree.nodes.size() == want.size());
        for (std::size_t i = 0; i < want.size(); ++i) {
            CHECK(tree.nodes[i].split == want[i].split);
            CHECK(tree.nodes[i].support == want[i].support);
            CHECK(tree.nodes[i].positives == want[i].positives);
            CHECK(tree.nodes[i].prediction == want[i].prediction);
        }
    }
}

TEST_CASE("tree properties") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t k = 2 + rng() % 7;
        auto t = random_table(rng, 20 + rng() % 120, k);
        // give the target some structure
        for (std::size_t i = 0; i < t.y.size(); ++i)
            if (rng() % 3) t.y[i] = (t.x[i][0] && !t.x[i][1]) || t.x[i][k - 1];
        const auto table = make_table(t);

        std::size_t prev_correct = 0;
        for (std::size_t depth = 1; depth <= 6; ++depth) {
            const auto tree = grow_tree(table, {depth, 0.0});
            const auto rules = tree_to_rules(tree, 0);
            std::size_t correct = 0;
            for (std::size_t i = 0; i < t.y.size(); ++i) {
                std::vector<std::int8_t> bits;
                for (bool b : t.x[i]) bits.push_back(b ? 1 : -1);
                const bool tree_says = tree.predict(bits);
                correct += tree_says == t.y[i];
                // rules fire exactly where the tree predicts True, and at most one does
                std::size_t fired = 0;
                for (const auto& r : rules) fired += r.satisfied_by(bits);
                CHECK(fired == (tree_says ? 1u : 0u));
            }
            // deeper trees only refine leaves
            CHECK(correct >= prev_correct);
            prev_correct = correct;

            for (const auto& r : rules) {
                CHECK(r.antecedents.size() <= depth + 1);
                std::set<KernelIndex> ks;
                for (const auto& c : r.antecedents) ks.insert(c.kernel);
                CHECK(ks.size() == r.antecedents.size());
                CHECK(std::is_sorted(r.antecedents.begin(), r.antecedents.end()));
            }
            for (const auto& node : tree.nodes) CHECK(node.support >= 1);
        }
    }
}

TEST_CASE("unbounded trees stop only where no split helps") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t k = 3 + rng() % 4;
        const auto t = exhaustive(k, [&](const std::vector<bool>&) { return bool(rng() & 1); });
        const auto table = make_table(t);
        const auto tree = grow_tree(table, {k, 0.0});
        std::map<std::size_t, std::vector<std::size_t>> at_leaf;
        for (std::size_t i = 0; i < t.y.size(); ++i) {
            std::size_t node = 0;
            while (!tree.nodes[node].is_leaf())
                node = t.x[i][*tree.nodes[node].split] ? tree.nodes[node].on_true : tree.nodes[node].on_false;
            at_leaf[node].push_back(i);
        }
        for (const auto& [node, rows] : at_leaf) {
            const auto& leaf = tree.nodes[node];
            CHECK(leaf.support == rows.size());
            if (leaf.positives != 0 && leaf.positives != leaf.support)
                CHECK_FALSE(oracle::best_split(t, rows).has_value());
        }
    }
}

TEST_CASE("planted layer is fitted exactly") {
    SynthConfig cfg;
    cfg.n_samples = 2000;
    cfg.layer_sizes = {10};
    cfg.n_classes = 2;
    cfg.seed = 4;
    cfg.rules = {{parse_planted_rule("0 <- 0 & !1 & 2"), parse_planted_rule("0 <- 3 & 4")}};
    const Dataset d = generate_synthetic(cfg);
    const auto bits = binarise_dataset(d, std::vector<std::string>{"conv1", "output"});
    const std::vector<KernelIndex> targets{0, 1};
    const auto rules = extract_layer(bits.at("conv1").bits, bits.at("output").bits, targets, d.split("train"), {5, 0.0});
    for (auto i : d.split("train")) {
        const auto row = bits.at("conv1").bits.row(i);
        for (KernelIndex c : targets) {
            bool fired = false;
            for (const auto& r : rules)
                if (r.consequents[0].kernel == c && r.satisfied_by(row)) fired = true;
            CHECK(fired == (d.teacher[i] == c));
        }
    }
    // ordered by target
    CHECK(std::is_sorted(rules.begin(), rules.end(),
                         [](const Rule& a, const Rule& b) { return a.consequents[0].kernel < b.consequents[0].kernel; }));
    const auto par = extract_layer(bits.at("conv1").bits, bits.at("output").bits, targets, d.split("train"), {5, 0.0}, 8);
    CHECK(par == rules);
}

TEST_CASE("extract_program configurations") {
    SynthConfig cfg;
    cfg.n_samples = 3000;
    cfg.layer_sizes = {10, 6};
    cfg.n_classes = 3;
    cfg.seed = 12;
    cfg.rules = {{parse_planted_rule("0 <- 0 & 1"), parse_planted_rule("1 <- !2 & 3"), parse_planted_rule("2 <- 4"),
                  parse_planted_rule("3 <- 5 & !6")},
                 {parse_planted_rule("0 <- 0 & !1"), parse_planted_rule("1 <- 2")}};
    const Dataset d = generate_synthetic(cfg);

    SUBCASE("single boundary") {
        const Program p = extract_program(d, {{"conv2", "output"}, {5, 0.01, true}});
        REQUIRE(p.rulesets.size() == 1);
        CHECK(p.rulesets[0].from_layer == "conv2");
        CHECK(p.thresholds.size() == 6);
        std::set<KernelIndex> classes;
        for (const auto& r : p.rulesets[0].rules) {
            for (const auto& c : r.antecedents) CHECK(c.kernel < 6);
            for (const auto& c : r.consequents) classes.insert(c.kernel);
        }
        CHECK(classes == std::set<KernelIndex>{0, 1, 2});
    }

    SUBCASE("entry layer may skip to the output") {
        const Program p = extract_program(d, {{"conv1", "output"}, {5, 0.01, true}});
        CHECK(p.layers == std::vector<std::string>{"conv1", "output"});
        CHECK(p.thresholds.size() == 10);
    }

    SUBCASE("chained boundaries, demand driven") {
        const Program lazy = extract_program(d, {{"conv1", "conv2", "output"}, {5, 0.1, true}});
        const Program eager = extract_program(d, {{"conv1", "conv2", "output"}, {5, 0.1, false}});
        REQUIRE(lazy.rulesets.size() == 2);
        std::set<KernelIndex> wanted, produced;
        for (const auto& r : lazy.rulesets[1].rules)
            for (const auto& c : r.antecedents) wanted.insert(c.kernel);
        for (const auto& r : lazy.rulesets[0].rules)
            for (const auto& c : r.consequents) produced.insert(c.kernel);
        for (auto k : produced) CHECK(wanted.count(k) == 1);
        CHECK(lazy.rulesets[0].rules.size() <= eager.rulesets[0].rules.size());
        CHECK(lazy.rulesets[1] == eager.rulesets[1]);
    }

    SUBCASE("bad configurations") {
        CHECK_THROWS_AS(extract_program(d, {{"conv1"}, {}}), std::invalid_argument);
        CHECK_THROWS_AS(extract_program(d, {{"conv2", "conv1", "output"}, {}}), std::invalid_argument);
        CHECK_THROWS_AS(extract_program(d, {{"conv1", "conv2"}, {}}), std::invalid_argument);
        CHECK_THROWS_AS(extract_program(d, {{"conv9", "output"}, {}}), DataError);
        CHECK_THROWS_AS(extract_program(d, {{"conv1", "output"}, {0, 0.01, true}}), std::invalid_argument);
        CHECK_THROWS_AS(extract_program(d, {{"conv1", "output"}, {5, -0.1, true}}), std::invalid_argument);
    }
}
