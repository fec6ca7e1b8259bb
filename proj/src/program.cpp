#include "convlogic/program.hpp"

#include "convlogic/dataset_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace convlogic {

namespace {

std::string default_name(std::string_view layer, KernelIndex k) {
    return std::string(layer) + "." + std::to_string(k);
}

bool cubes_intersect(const std::vector<Condition>& a, const std::vector<Condition>& b) {
    // Both sorted by kernel.
    auto i = a.begin();
    auto j = b.begin();
    while (i != a.end() && j != b.end()) {
        if (i->kernel < j->kernel) {
            ++i;
        } else if (j->kernel < i->kernel) {
            ++j;
        } else {
            if (i->positive != j->positive) return false;
            ++i;
            ++j;
        }
    }
    return true;
}

std::vector<KernelIndex> consequent_kernels(const Rule& r) {
    std::vector<KernelIndex> out;
    out.reserve(r.consequents.size());
    for (const auto& c : r.consequents) out.push_back(c.kernel);
    return out;
}

// Union of consequent lists; a kernel present in both keeps the entry that wins arbitration.
std::vector<Consequent> union_consequents(const std::vector<Consequent>& a, const std::vector<Consequent>& b) {
    std::vector<Consequent> out;
    auto i = a.begin();
    auto j = b.begin();
    while (i != a.end() || j != b.end()) {
        if (j == b.end() || (i != a.end() && i->kernel < j->kernel)) {
            out.push_back(*i++);
        } else if (i == a.end() || j->kernel < i->kernel) {
            out.push_back(*j++);
        } else {
            out.push_back(outranks(*j, *i) ? *j : *i);
            ++i;
            ++j;
        }
    }
    return out;
}

// Merging rules `a` and `b` (disjoint cubes, same consequent kernels) into `merged`
// changes the arbitration statistics seen on each cube. The merge is exact only if every
// comparison between a changed entry and any co-firing entry of another class keeps its
// outcome.
bool merge_keeps_arbitration(const std::vector<Rule>& rules, const std::vector<bool>& alive, std::size_t a,
                             std::size_t b, const Rule& merged) {
    for (const std::size_t side : {a, b}) {
        const Rule& old_rule = rules[side];
        const auto& olds = old_rule.consequents;
        const auto& news = merged.consequents;
        for (std::size_t x = 0; x < olds.size(); ++x)
            for (std::size_t y = 0; y < olds.size(); ++y)
                if (x != y && outranks(olds[x], olds[y]) != outranks(news[x], news[y])) return false;
        for (std::size_t r = 0; r < rules.size(); ++r) {
            if (!alive[r] || r == a || r == b) continue;
            if (!cubes_intersect(old_rule.antecedents, rules[r].antecedents)) continue;
            for (std::size_t x = 0; x < olds.size(); ++x)
                for (const auto& other : rules[r].consequents) {
                    if (other.kernel == olds[x].kernel) continue;
                    if (outranks(olds[x], other) != outranks(news[x], other)) return false;
                }
        }
    }
    return true;
}

bool merge_identical_antecedents(std::vector<Rule>& rules) {
    std::map<std::vector<Condition>, std::size_t> first;
    std::vector<Rule> out;
    out.reserve(rules.size());
    bool changed = false;
    for (auto& r : rules) {
        const auto [it, inserted] = first.emplace(r.antecedents, out.size());
        if (inserted) {
            out.push_back(std::move(r));
        } else {
            Rule& keep = out[it->second];
            keep.consequents = union_consequents(keep.consequents, r.consequents);
            changed = true;
        }
    }
    rules = std::move(out);
    return changed;
}

bool merge_complementary(std::vector<Rule>& rules, bool output) {
    std::map<std::vector<Condition>, std::size_t> index;
    for (std::size_t i = 0; i < rules.size(); ++i) index.emplace(rules[i].antecedents, i);
    std::vector<bool> alive(rules.size(), true);
    bool changed = false;
    for (std::size_t i = 0; i < rules.size(); ++i) {
        if (!alive[i]) continue;
        for (std::size_t p = 0; p < rules[i].antecedents.size(); ++p) {
            auto flipped = rules[i].antecedents;
            flipped[p].positive = !flipped[p].positive;
            const auto it = index.find(flipped);
            if (it == index.end()) continue;
            const std::size_t j = it->second;
            if (j == i || !alive[j] || rules[j].antecedents != flipped) continue;
            if (consequent_kernels(rules[i]) != consequent_kernels(rules[j])) continue;

            Rule merged;
            merged.antecedents = rules[i].antecedents;
            merged.antecedents.erase(merged.antecedents.begin() + static_cast<std::ptrdiff_t>(p));
            merged.consequents = rules[i].consequents;
            for (std::size_t c = 0; c < merged.consequents.size(); ++c) {
                merged.consequents[c].support += rules[j].consequents[c].support;
                merged.consequents[c].positives += rules[j].consequents[c].positives;
            }
            if (output && !merge_keeps_arbitration(rules, alive, i, j, merged)) continue;

            index.erase(rules[i].antecedents);
            index.erase(rules[j].antecedents);
            alive[j] = false;
            rules[i] = std::move(merged);
            index.emplace(rules[i].antecedents, i);
            changed = true;
            break;
        }
    }
    if (changed) {
        std::vector<Rule> out;
        for (std::size_t i = 0; i < rules.size(); ++i)
            if (alive[i]) out.push_back(std::move(rules[i]));
        rules = std::move(out);
    }
    return changed;
}

// -- text format --------------------------------------------------------------

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'; }

class Cursor {
public:
    Cursor(std::string_view text, std::size_t line) : text_(text), line_(line) {}

    [[noreturn]] void fail(const std::string& msg) const { throw ParseError(line_, pos_ + 1, msg); }

    void skip_space() {
        while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\r')) ++pos_;
    }
    bool at_end() {
        skip_space();
        return pos_ >= text_.size();
    }
    bool peek(std::string_view token) {
        skip_space();
        return text_.substr(pos_, token.size()) == token;
    }
    bool accept(std::string_view token) {
        if (!peek(token)) return false;
        pos_ += token.size();
        return true;
    }
    // Like accept, but the token must not continue as a longer name.
    bool accept_word(std::string_view word) {
        if (!peek(word)) return false;
        const std::size_t end = pos_ + word.size();
        if (end < text_.size() && ident_char(text_[end])) return false;
        if (end + 1 < text_.size() && text_[end] == '.' && std::isdigit(static_cast<unsigned char>(text_[end + 1])))
            return false;
        pos_ = end;
        return true;
    }
    void expect(std::string_view token) {
        if (!accept(token)) fail("expected '" + std::string(token) + "'");
    }
    std::string identifier() {
        skip_space();
        const std::size_t start = pos_;
        while (pos_ < text_.size() && ident_char(text_[pos_])) ++pos_;
        if (pos_ == start) fail("expected a name");
        return std::string(text_.substr(start, pos_ - start));
    }
    std::uint32_t integer() {
        skip_space();
        std::uint32_t v = 0;
        const auto [ptr, ec] = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), v);
        if (ec != std::errc{}) fail("expected an integer");
        pos_ = static_cast<std::size_t>(ptr - text_.data());
        return v;
    }
    // "<layer>.<index>" with the layer pinned to `layer`.
    KernelIndex kernel_ref(const std::string& layer, std::size_t size) {
        const std::size_t start = pos_;
        const std::string name = identifier();
        if (name != layer) {
            pos_ = start;
            skip_space();
            fail("literal refers to layer '" + name + "', expected '" + layer + "'");
        }
        if (pos_ >= text_.size() || text_[pos_] != '.') fail("expected '.' after layer name");
        ++pos_;
        if (pos_ >= text_.size() || !std::isdigit(static_cast<unsigned char>(text_[pos_])))
            fail("expected kernel index");
        const std::size_t at = pos_;
        const auto k = integer();
        if (k >= size) {
            pos_ = at;
            fail("kernel " + std::to_string(k) + " out of range for layer '" + layer + "'");
        }
        return k;
    }
    std::size_t pos() const { return pos_; }
    void set_pos(std::size_t p) { pos_ = p; }

private:
    std::string_view text_;
    std::size_t line_;
    std::size_t pos_ = 0;
};

std::vector<std::uint32_t> integer_list(Cursor& c) {
    std::vector<std::uint32_t> v{c.integer()};
    while (c.accept("/")) v.push_back(c.integer());
    return v;
}

Rule parse_rule_line(Cursor& c, const Program& p, std::size_t boundary) {
    const std::string& from = p.layers[boundary];
    const std::string& to = p.layers[boundary + 1];
    const bool output = boundary + 2 == p.layers.size();
    Rule r;
    do {
        c.skip_space();
        const std::size_t at = c.pos();
        KernelIndex k = 0;
        if (output) {
            const std::string name = c.identifier();
            const auto it = std::find(p.class_names.begin(), p.class_names.end(), name);
            if (it == p.class_names.end()) {
                c.set_pos(at);
                c.fail("unknown class '" + name + "'");
            }
            k = static_cast<KernelIndex>(it - p.class_names.begin());
        } else {
            k = c.kernel_ref(to, p.layer_sizes[boundary + 1]);
        }
        for (const auto& existing : r.consequents)
            if (existing.kernel == k) {
                c.set_pos(at);
                c.fail("duplicate consequent");
            }
        r.consequents.push_back({k, 1, 1});
    } while (c.accept(","));
    c.expect("<-");
    if (!c.accept_word("true")) {
        do {
            c.skip_space();
            const std::size_t at = c.pos();
            Condition cond;
            cond.positive = !c.accept("!");
            c.skip_space();
            cond.kernel = c.kernel_ref(from, p.layer_sizes[boundary]);
            for (const auto& existing : r.antecedents)
                if (existing.kernel == cond.kernel) {
                    c.set_pos(at);
                    c.fail("kernel appears twice in antecedents");
                }
            r.antecedents.push_back(cond);
        } while (c.accept("&"));
    }
    c.expect(".");
    if (c.accept("{")) {
        c.expect("support");
        c.expect("=");
        const auto support = integer_list(c);
        c.expect(",");
        c.expect("pos");
        c.expect("=");
        const auto positives = integer_list(c);
        c.expect("}");
        if (support.size() != r.consequents.size() || positives.size() != r.consequents.size())
            c.fail("expected one support and pos value per consequent");
        for (std::size_t i = 0; i < r.consequents.size(); ++i) {
            if (positives[i] < 1 || positives[i] > support[i]) c.fail("require 1 <= pos <= support");
            r.consequents[i].support = support[i];
            r.consequents[i].positives = positives[i];
        }
    }
    if (!c.at_end()) c.fail("unexpected text after rule");
    std::sort(r.antecedents.begin(), r.antecedents.end());
    std::sort(r.consequents.begin(), r.consequents.end(),
              [](const Consequent& a, const Consequent& b) { return a.kernel < b.kernel; });
    return r;
}

std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const auto comma = s.find(',', pos);
        out.push_back(trim(s.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return out;
}

std::size_t parse_size(const std::string& s, std::size_t line) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw ParseError(line, 1, "expected a count, got '" + s + "'");
    return v;
}

double parse_real(const std::string& s, std::size_t line) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) throw ParseError(line, 1, "expected a number, got '" + s + "'");
    return v;
}

} // namespace

// ---------------------------------------------------------------------------

bool Rule::satisfied_by(std::span<const std::int8_t> bits) const {
    for (const auto& c : antecedents)
        if ((bits[c.kernel] == 1) != c.positive) return false;
    return true;
}

bool outranks(const Consequent& a, const Consequent& b) {
    const std::uint64_t lhs = std::uint64_t{a.positives} * b.support;
    const std::uint64_t rhs = std::uint64_t{b.positives} * a.support;
    if (lhs != rhs) return lhs > rhs;
    if (a.support != b.support) return a.support > b.support;
    return a.kernel < b.kernel;
}

void validate(const Program& p) {
    if (p.layers.size() < 2) throw DataError("program needs an entry layer and an output layer");
    if (p.layers.back() != kOutputLayer) throw DataError("program must end at the output layer");
    if (p.layer_sizes.size() != p.layers.size()) throw DataError("program layer sizes do not match layers");
    std::set<std::string> names;
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        if (!is_identifier(p.layers[l])) throw DataError("bad layer name '" + p.layers[l] + "'");
        if (!names.insert(p.layers[l]).second) throw DataError("duplicate layer '" + p.layers[l] + "'");
        if (p.layer_sizes[l] == 0) throw DataError("layer '" + p.layers[l] + "' has no kernels");
    }
    if (p.class_names.size() != p.layer_sizes.back()) throw DataError("class names do not match output size");
    for (const auto& c : p.class_names)
        if (!is_identifier(c)) throw DataError("bad class name '" + c + "'");
    if (p.thresholds.size() != p.layer_sizes.front())
        throw DataError("threshold count does not match entry layer '" + p.layers.front() + "'");
    for (float t : p.thresholds)
        if (!std::isfinite(t) || t < 0.0f) throw DataError("thresholds must be finite and non-negative");
    if (p.rulesets.size() + 1 != p.layers.size()) throw DataError("expected one rule set per layer boundary");
    if (p.params.depth < 1) throw DataError("depth must be at least 1");
    if (!(p.params.alpha >= 0.0 && p.params.alpha < 1.0)) throw DataError("alpha must lie in [0, 1)");
    for (std::size_t b = 0; b < p.rulesets.size(); ++b) {
        const RuleSet& rs = p.rulesets[b];
        if (rs.from_layer != p.layers[b] || rs.to_layer != p.layers[b + 1])
            throw DataError("rule set " + std::to_string(b) + " does not chain " + p.layers[b] + " -> " + p.layers[b + 1]);
        for (const auto& r : rs.rules) {
            if (r.consequents.empty()) throw DataError("rule without consequents");
            for (std::size_t i = 0; i < r.antecedents.size(); ++i) {
                if (r.antecedents[i].kernel >= p.layer_sizes[b]) throw DataError("antecedent kernel out of range");
                if (i && r.antecedents[i - 1].kernel >= r.antecedents[i].kernel)
                    throw DataError("antecedents must be sorted with each kernel at most once");
            }
            for (std::size_t i = 0; i < r.consequents.size(); ++i) {
                const auto& c = r.consequents[i];
                if (c.kernel >= p.layer_sizes[b + 1]) throw DataError("consequent kernel out of range");
                if (i && r.consequents[i - 1].kernel >= c.kernel)
                    throw DataError("consequents must be sorted with each kernel at most once");
                if (c.positives < 1 || c.positives > c.support) throw DataError("require 1 <= positives <= support");
            }
        }
    }
}

Program simplify(const Program& p) {
    Program out = p;
    for (std::size_t b = 0; b < out.rulesets.size(); ++b) {
        const bool output = b + 1 == out.rulesets.size();
        auto& rules = out.rulesets[b].rules;
        for (bool changed = true; changed;) {
            changed = merge_identical_antecedents(rules);
            changed = merge_complementary(rules, output) || changed;
        }
    }
    return out;
}

BitVector infer_layer(std::span<const std::int8_t> bits, const RuleSet& rs, std::size_t next_size) {
    BitVector next(next_size, -1);
    for (const auto& r : rs.rules) {
        for (const auto& c : r.antecedents)
            if (c.kernel >= bits.size()) throw DataError("antecedent kernel out of range");
        if (!r.satisfied_by(bits)) continue;
        for (const auto& c : r.consequents) {
            if (c.kernel >= next_size) throw DataError("consequent kernel out of range");
            next[c.kernel] = 1;
        }
    }
    return next;
}

ClassDecision infer(const Program& p, std::span<const std::int8_t> entry_bits) {
    if (entry_bits.size() != p.layer_sizes.front())
        throw DataError("infer: expected " + std::to_string(p.layer_sizes.front()) + " entry bits, got " +
                        std::to_string(entry_bits.size()));
    ClassDecision decision;
    BitVector current(entry_bits.begin(), entry_bits.end());
    for (std::size_t b = 0; b < p.rulesets.size(); ++b) {
        const auto& rules = p.rulesets[b].rules;
        const bool output = b + 1 == p.rulesets.size();
        BitVector next(p.layer_sizes[b + 1], -1);
        const Consequent* best = nullptr;
        for (std::size_t r = 0; r < rules.size(); ++r) {
            if (!rules[r].satisfied_by(current)) continue;
            decision.trace.push_back({b, r});
            for (const auto& c : rules[r].consequents) {
                next[c.kernel] = 1;
                if (output && (best == nullptr || outranks(c, *best))) {
                    best = &c;
                    decision.decisive = FiredRule{b, r};
                }
            }
        }
        if (output) {
            if (best) decision.cls = best->kernel;
            decision.conflict = std::count(next.begin(), next.end(), std::int8_t{1}) > 1;
        }
        current = std::move(next);
    }
    return decision;
}

std::vector<ClassDecision> decide_samples(const Program& p, const Dataset& d, std::span<const SampleIndex> samples,
                                          unsigned jobs) {
    const NormMatrix& norms = d.layer_norms(p.entry_layer());
    if (norms.cols != p.thresholds.size())
        throw DataError("program thresholds do not match layer '" + p.entry_layer() + "'");
    std::vector<ClassDecision> out(samples.size());
    parallel_for(samples.size(), jobs, [&](std::size_t s) {
        if (samples[s] >= norms.rows) throw DataError("sample index out of range");
        out[s] = infer(p, quantise_row(norms.row(samples[s]), p.thresholds));
    });
    return out;
}

std::vector<Prediction> predict_dataset(const Program& p, const Dataset& d, std::string_view split, unsigned jobs) {
    const auto decisions = decide_samples(p, d, d.split(split), jobs);
    std::vector<Prediction> out;
    out.reserve(decisions.size());
    for (const auto& dec : decisions) out.push_back(dec.cls);
    return out;
}

ParseError::ParseError(std::size_t line, std::size_t column, const std::string& message)
    : DataError("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + message),
      line_(line),
      column_(column) {}

std::string format_real(double v) {
    char buf[40];
    for (int precision = 1; precision <= 17; ++precision) {
        std::snprintf(buf, sizeof buf, "%.*g", precision, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

std::string serialise(const Program& p, const KernelNamer& namer) {
    validate(p);
    const KernelNamer& name = namer ? namer : KernelNamer(default_name);
    std::ostringstream out;
    out << "# convlogic program\n[program]\nversion = 1\nlayers = ";
    for (std::size_t l = 0; l < p.layers.size(); ++l) out << (l ? ", " : "") << p.layers[l] << ':' << p.layer_sizes[l];
    out << "\nclasses = ";
    for (std::size_t c = 0; c < p.class_names.size(); ++c) out << (c ? ", " : "") << p.class_names[c];
    out << "\ndepth = " << p.params.depth << "\nalpha = " << format_real(p.params.alpha)
        << "\ndemand_driven = " << (p.params.demand_driven ? "true" : "false") << "\n\n[thresholds "
        << p.entry_layer() << "]\n";
    char buf[32];
    for (std::size_t k = 0; k < p.thresholds.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(p.thresholds[k]));
        out << 'k' << k << " = " << buf << '\n';
    }
    for (std::size_t b = 0; b < p.rulesets.size(); ++b) {
        const RuleSet& rs = p.rulesets[b];
        const bool output = b + 1 == p.rulesets.size();
        out << "\n[rules " << rs.from_layer << " -> " << rs.to_layer << "]\n";
        for (const auto& r : rs.rules) {
            for (std::size_t c = 0; c < r.consequents.size(); ++c) {
                const auto k = r.consequents[c].kernel;
                out << (c ? ", " : "") << (output ? p.class_names[k] : name(rs.to_layer, k));
            }
            out << " <- ";
            if (r.antecedents.empty()) out << "true";
            for (std::size_t a = 0; a < r.antecedents.size(); ++a)
                out << (a ? " & " : "") << (r.antecedents[a].positive ? "" : "!")
                    << name(rs.from_layer, r.antecedents[a].kernel);
            out << ". {support=";
            for (std::size_t c = 0; c < r.consequents.size(); ++c) out << (c ? "/" : "") << r.consequents[c].support;
            out << ", pos=";
            for (std::size_t c = 0; c < r.consequents.size(); ++c) out << (c ? "/" : "") << r.consequents[c].positives;
            out << "}\n";
        }
    }
    return out.str();
}

Program parse_program(std::string_view text) {
    enum class Section { none, program, thresholds, rules };
    Program p;
    Section section = Section::none;
    std::size_t boundary = 0;
    std::set<std::string> keys;
    std::vector<bool> have_threshold;
    bool header_done = false;
    std::size_t rule_sections = 0;

    auto finish_header = [&](std::size_t line) {
        if (header_done) return;
        for (const char* key : {"version", "layers", "classes", "depth", "alpha", "demand_driven"})
            if (!keys.count(key)) throw ParseError(line, 1, std::string("missing '") + key + "' in [program]");
        if (p.class_names.size() != p.layer_sizes.back())
            throw ParseError(line, 1, "class count does not match output layer size");
        p.rulesets.resize(p.layers.size() - 1);
        p.thresholds.assign(p.layer_sizes.front(), 0.0f);
        have_threshold.assign(p.layer_sizes.front(), false);
        header_done = true;
    };

    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
        const std::string line = trim(raw);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']') throw ParseError(line_no, line.size(), "expected ']'");
            Cursor c(std::string_view(line).substr(1, line.size() - 2), line_no);
            const std::string kind = c.identifier();
            if (kind == "program") {
                if (section != Section::none) throw ParseError(line_no, 1, "[program] must come first");
                section = Section::program;
            } else if (kind == "thresholds") {
                finish_header(line_no);
                const std::string layer = c.identifier();
                if (layer != p.entry_layer()) throw ParseError(line_no, 1, "thresholds must be for the entry layer");
                section = Section::thresholds;
            } else if (kind == "rules") {
                finish_header(line_no);
                const std::string from = c.identifier();
                c.expect("->");
                const std::string to = c.identifier();
                if (rule_sections + 1 >= p.layers.size() || from != p.layers[rule_sections] ||
                    to != p.layers[rule_sections + 1])
                    throw ParseError(line_no, 1, "rule section " + from + " -> " + to + " does not chain the layers");
                boundary = rule_sections++;
                p.rulesets[boundary].from_layer = from;
                p.rulesets[boundary].to_layer = to;
                section = Section::rules;
            } else {
                throw ParseError(line_no, 2, "unknown section '" + kind + "'");
            }
            if (!c.at_end()) c.fail("unexpected text in section header");
            continue;
        }

        switch (section) {
        case Section::none:
            throw ParseError(line_no, 1, "content before [program]");
        case Section::program: {
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ParseError(line_no, line.size() + 1, "expected 'key = value'");
            const std::string key = trim(std::string_view(line).substr(0, eq));
            const std::string value = trim(std::string_view(line).substr(eq + 1));
            if (!keys.insert(key).second) throw ParseError(line_no, 1, "duplicate key '" + key + "'");
            if (key == "version") {
                if (value != "1") throw ParseError(line_no, eq + 2, "unsupported version " + value);
            } else if (key == "layers") {
                for (const auto& item : split_list(value)) {
                    const auto colon = item.find(':');
                    if (colon == std::string::npos) throw ParseError(line_no, eq + 2, "expected 'layer:size'");
                    p.layers.push_back(trim(std::string_view(item).substr(0, colon)));
                    p.layer_sizes.push_back(parse_size(trim(std::string_view(item).substr(colon + 1)), line_no));
                }
                if (p.layers.size() < 2 || p.layers.back() != kOutputLayer)
                    throw ParseError(line_no, eq + 2, "layers must name an entry layer and end with output");
            } else if (key == "classes") {
                p.class_names = split_list(value);
            } else if (key == "depth") {
                p.params.depth = parse_size(value, line_no);
            } else if (key == "alpha") {
                p.params.alpha = parse_real(value, line_no);
            } else if (key == "demand_driven") {
                if (value != "true" && value != "false") throw ParseError(line_no, eq + 2, "expected true or false");
                p.params.demand_driven = value == "true";
            } else {
                throw ParseError(line_no, 1, "unknown key '" + key + "'");
            }
            break;
        }
        case Section::thresholds: {
            Cursor c(line, line_no);
            c.expect("k");
            const auto k = c.integer();
            if (k >= p.thresholds.size()) throw ParseError(line_no, 2, "threshold index out of range");
            if (have_threshold[k]) throw ParseError(line_no, 2, "duplicate threshold");
            c.expect("=");
            c.skip_space();
            const std::string value = line.substr(c.pos());
            char* end = nullptr;
            const float v = std::strtof(value.c_str(), &end);
            if (value.empty() || end != value.c_str() + value.size())
                throw ParseError(line_no, c.pos() + 1, "expected a threshold value");
            p.thresholds[k] = v;
            have_threshold[k] = true;
            break;
        }
        case Section::rules: {
            Cursor c(line, line_no);
            p.rulesets[boundary].rules.push_back(parse_rule_line(c, p, boundary));
            break;
        }
        }
    }
    if (!header_done) finish_header(line_no);
    if (std::find(have_threshold.begin(), have_threshold.end(), false) != have_threshold.end())
        throw ParseError(line_no, 1, "missing thresholds for the entry layer");
    if (rule_sections + 1 != p.layers.size()) throw ParseError(line_no, 1, "missing rule sections");
    validate(p);
    return p;
}

std::string to_json(const Program& p) {
    validate(p);
    using nlohmann::json;
    json j;
    j["version"] = 1;
    json layers = json::array();
    for (std::size_t l = 0; l < p.layers.size(); ++l)
        layers.push_back({{"name", p.layers[l]}, {"n_kernels", p.layer_sizes[l]}});
    j["layers"] = layers;
    j["classes"] = p.class_names;
    j["params"] = {{"depth", p.params.depth}, {"alpha", p.params.alpha}, {"demand_driven", p.params.demand_driven}};
    j["thresholds"] = {{"layer", p.entry_layer()}, {"values", p.thresholds}};
    json sets = json::array();
    for (const auto& rs : p.rulesets) {
        json rules = json::array();
        for (const auto& r : rs.rules) {
            json ants = json::array();
            for (const auto& a : r.antecedents) ants.push_back({{"kernel", a.kernel}, {"positive", a.positive}});
            json cons = json::array();
            for (const auto& c : r.consequents)
                cons.push_back({{"kernel", c.kernel}, {"support", c.support}, {"positives", c.positives}});
            rules.push_back({{"antecedents", ants}, {"consequents", cons}});
        }
        sets.push_back({{"from", rs.from_layer}, {"to", rs.to_layer}, {"rules", rules}});
    }
    j["rulesets"] = sets;
    return j.dump(2) + "\n";
}

Program load_program(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open " + file.string());
    std::stringstream text;
    text << in.rdbuf();
    return parse_program(text.str());
}

void save_program(const Program& p, const std::filesystem::path& file) {
    const std::string text = serialise(p);
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + file.string() + " for writing");
    out << text;
    out.flush();
    if (!out) throw IoError("write failed for " + file.string());
}

} // namespace convlogic
