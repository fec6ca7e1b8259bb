#include "convlogic/evaluate.hpp"

#include "convlogic/dataset_io.hpp"

#include <cstdio>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace convlogic {

namespace {

Fraction match_rate(std::span<const Prediction> predictions, std::span<const std::uint16_t> reference) {
    if (predictions.size() != reference.size()) throw std::invalid_argument("prediction and reference lengths differ");
    if (predictions.empty()) return std::nullopt;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        hits += predictions[i].has_value() && *predictions[i] == reference[i];
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

Fraction rate(std::size_t count, std::size_t total) {
    if (total == 0) return std::nullopt;
    return static_cast<double>(count) / static_cast<double>(total);
}

std::string pct(const Fraction& f) {
    if (!f) return "NA";
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * *f);
    return buf;
}

std::string gap(const Fraction& a, const Fraction& b) {
    if (!a || !b) return "NA";
    return pct(*a - *b);
}

} // namespace

Fraction accuracy(std::span<const Prediction> predictions, std::span<const std::uint16_t> labels) {
    return match_rate(predictions, labels);
}

Fraction fidelity(std::span<const Prediction> predictions, std::span<const std::uint16_t> teacher) {
    return match_rate(predictions, teacher);
}

ProgramStats program_stats(const Program& p) {
    ProgramStats s;
    std::set<std::pair<std::size_t, KernelIndex>> vars;
    std::set<std::tuple<std::size_t, KernelIndex, bool>> literals;
    for (std::size_t b = 0; b < p.rulesets.size(); ++b) {
        for (const auto& r : p.rulesets[b].rules) {
            ++s.n_rules;
            s.size += r.antecedents.size();
            for (const auto& a : r.antecedents) {
                vars.emplace(b, a.kernel);
                literals.emplace(b, a.kernel, a.positive);
            }
            for (const auto& c : r.consequents) {
                vars.emplace(b + 1, c.kernel);
                literals.emplace(b + 1, c.kernel, true);
            }
        }
    }
    s.n_vars = vars.size();
    s.n_vars_polarity = literals.size();
    return s;
}

SplitMetrics evaluate_split(const Program& p, const Dataset& d, const std::string& split, unsigned jobs) {
    const auto samples = d.split(split);
    const auto decisions = decide_samples(p, d, samples, jobs);
    SplitMetrics m;
    m.split = split;
    m.samples = samples.size();
    std::vector<Prediction> preds;
    std::vector<std::uint16_t> labels;
    std::vector<std::uint16_t> teacher;
    std::size_t abstain = 0;
    std::size_t conflict = 0;
    std::size_t teacher_hits = 0;
    for (std::size_t s = 0; s < samples.size(); ++s) {
        preds.push_back(decisions[s].cls);
        labels.push_back(d.labels[samples[s]]);
        teacher.push_back(d.teacher[samples[s]]);
        abstain += !decisions[s].cls.has_value();
        conflict += decisions[s].conflict;
        teacher_hits += d.labels[samples[s]] == d.teacher[samples[s]];
    }
    m.accuracy = accuracy(preds, labels);
    m.fidelity = fidelity(preds, teacher);
    m.abstain_rate = rate(abstain, samples.size());
    m.conflict_rate = rate(conflict, samples.size());
    m.teacher_accuracy = rate(teacher_hits, samples.size());
    return m;
}

double default_alpha(std::size_t boundaries) { return boundaries > 1 ? 0.1 : 0.01; }

std::vector<std::string> sweep_layers(const Dataset& d, const std::string& lep, bool chain) {
    const std::size_t first = d.layer_position(lep);
    const auto& layers = d.manifest.layers;
    if (first + 1 >= layers.size()) throw std::invalid_argument("entry layer must precede the output layer");
    std::vector<std::string> out{lep};
    if (chain)
        for (std::size_t l = first + 1; l + 1 < layers.size(); ++l) out.push_back(layers[l].name);
    out.emplace_back(kOutputLayer);
    return out;
}

SweepGrid run_sweep(const Dataset& d, const SweepSpec& spec, unsigned jobs) {
    SweepGrid grid;
    grid.spec = spec;
    for (const auto& lep : spec.leps)
        for (auto depth : spec.depths) {
            SweepCell cell;
            cell.lep = lep;
            cell.depth = depth;
            grid.cells.push_back(std::move(cell));
        }
    parallel_for(grid.cells.size(), jobs, [&](std::size_t i) {
        SweepCell& cell = grid.cells[i];
        try {
            cell.layers = sweep_layers(d, cell.lep, spec.chain);
            cell.alpha = spec.alpha.value_or(default_alpha(cell.layers.size() - 1));
            ExtractionConfig cfg{cell.layers, {cell.depth, cell.alpha, spec.demand_driven}};
            cell.extracted = extract_program(d, cfg);
            cell.simplified = simplify(cell.extracted);
            cell.stats = program_stats(cell.simplified);
            for (const auto& split : spec.splits) cell.splits.push_back(evaluate_split(cell.simplified, d, split));
        } catch (const std::exception& e) {
            cell.error = e.what();
        }
    });
    return grid;
}

std::string format_fraction(const Fraction& f, int decimals) {
    if (!f) return "NA";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, *f);
    return buf;
}

std::string sweep_csv(const SweepGrid& grid) {
    std::ostringstream out;
    out << kSweepCsvHeader << '\n';
    for (const auto& cell : grid.cells) {
        const std::string alpha = cell.error ? "NA" : format_real(cell.alpha);
        if (cell.error) {
            for (const auto& split : grid.spec.splits)
                out << cell.lep << ',' << cell.depth << ',' << alpha << ',' << split << ",NA,NA,NA,NA,NA,NA,NA\n";
            continue;
        }
        for (const auto& m : cell.splits)
            out << cell.lep << ',' << cell.depth << ',' << alpha << ',' << m.split << ',' << format_fraction(m.accuracy)
                << ',' << format_fraction(m.fidelity) << ',' << format_fraction(m.abstain_rate) << ','
                << cell.stats.n_rules << ',' << cell.stats.n_vars << ',' << cell.stats.n_vars_polarity << ','
                << cell.stats.size << '\n';
    }
    return out.str();
}

std::string sweep_table(const SweepGrid& grid) {
    std::ostringstream out;
    char buf[256];
    const auto& splits = grid.spec.splits;
    out << "lep        depth |";
    for (const char* group : {"teacher", "program", "gap"}) {
        out << ' ' << group << ':';
        for (const auto& s : splits) {
            std::snprintf(buf, sizeof buf, " %6s", s.substr(0, 6).c_str());
            out << buf;
        }
        out << " |";
    }
    out << "  vars rules  size\n";
    for (const auto& cell : grid.cells) {
        std::snprintf(buf, sizeof buf, "%-10s %5zu |", cell.lep.c_str(), cell.depth);
        out << buf;
        if (cell.error) {
            out << " failed: " << *cell.error << '\n';
            continue;
        }
        for (int group = 0; group < 3; ++group) {
            out << ' ' << (group == 0 ? "teacher" : group == 1 ? "program" : "gap") << ':';
            for (const auto& m : cell.splits) {
                const std::string v = group == 0   ? pct(m.teacher_accuracy)
                                      : group == 1 ? pct(m.accuracy)
                                                   : gap(m.teacher_accuracy, m.accuracy);
                std::snprintf(buf, sizeof buf, " %6s", v.c_str());
                out << buf;
            }
            out << " |";
        }
        std::snprintf(buf, sizeof buf, " %5zu %5zu %5zu\n", cell.stats.n_vars, cell.stats.n_rules, cell.stats.size);
        out << buf;
    }
    return out.str();
}

} // namespace convlogic
