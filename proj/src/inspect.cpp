#include "convlogic/inspect.hpp"

#include "convlogic/dataset_io.hpp"
#include "convlogic/quantise.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace convlogic {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

KernelNamer namer_for(const LabelMap& labels) {
    return [&labels](std::string_view layer, KernelIndex k) {
        if (const std::string* label = labels.find(layer, k)) return *label;
        return std::string(layer) + "." + std::to_string(k);
    };
}

std::string render_rule(const Program& p, std::size_t boundary, const Rule& r, const KernelNamer& name) {
    const RuleSet& rs = p.rulesets[boundary];
    const bool output = boundary + 1 == p.rulesets.size();
    std::string s;
    for (std::size_t c = 0; c < r.consequents.size(); ++c) {
        if (c) s += ", ";
        s += output ? p.class_names[r.consequents[c].kernel] : name(rs.to_layer, r.consequents[c].kernel);
    }
    s += " <- ";
    if (r.antecedents.empty()) s += "true";
    for (std::size_t a = 0; a < r.antecedents.size(); ++a) {
        if (a) s += " & ";
        if (!r.antecedents[a].positive) s += '!';
        s += name(rs.from_layer, r.antecedents[a].kernel);
    }
    return s + ".";
}

} // namespace

KernelProfile top_m(const Dataset& d, const std::string& layer, KernelIndex kernel, std::size_t m) {
    const NormMatrix& norms = d.layer_norms(layer);
    if (kernel >= norms.cols) throw std::invalid_argument("kernel " + std::to_string(kernel) + " out of range");
    const auto train = d.split("train");
    if (m < 1) throw std::invalid_argument("m must be at least 1");
    if (m > train.size())
        throw std::invalid_argument("m = " + std::to_string(m) + " exceeds the training split size " +
                                    std::to_string(train.size()));
    std::vector<SampleIndex> order(train.begin(), train.end());
    const auto stronger = [&](SampleIndex a, SampleIndex b) {
        const float na = norms.at(a, kernel);
        const float nb = norms.at(b, kernel);
        return na != nb ? na > nb : a < b;
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(), stronger);
    KernelProfile profile{layer, kernel, {}};
    for (std::size_t i = 0; i < m; ++i) {
        ProfileEntry e{order[i], norms.at(order[i], kernel), std::nullopt};
        if (d.manifest.image_refs) e.image_ref = (*d.manifest.image_refs)[order[i]];
        profile.top.push_back(std::move(e));
    }
    return profile;
}

std::string format_profile(const KernelProfile& profile) {
    std::ostringstream out;
    out << "# top " << profile.top.size() << " training samples for " << profile.layer << '.' << profile.kernel << '\n';
    out << "rank\tsample\tnorm\timage\n";
    char buf[32];
    for (std::size_t i = 0; i < profile.top.size(); ++i) {
        const auto& e = profile.top[i];
        std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(e.norm));
        out << i + 1 << '\t' << e.sample << '\t' << buf << '\t' << e.image_ref.value_or("-") << '\n';
    }
    return out.str();
}

void LabelMap::set(const std::string& layer, KernelIndex kernel, std::string label) {
    if (label.empty()) throw DataError("empty label for " + layer + "." + std::to_string(kernel));
    labels_[{layer, kernel}] = std::move(label);
}

const std::string* LabelMap::find(std::string_view layer, KernelIndex kernel) const {
    const auto it = labels_.find(std::pair<std::string, KernelIndex>(std::string(layer), kernel));
    return it == labels_.end() ? nullptr : &it->second;
}

LabelMap LabelMap::parse(std::string_view text) {
    LabelMap map;
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
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(line_no, 1, "expected 'layer.kernel = label'");
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string label = trim(std::string_view(line).substr(eq + 1));
        const auto dot = key.rfind('.');
        if (dot == std::string::npos || dot == 0 || dot + 1 == key.size())
            throw ParseError(line_no, 1, "expected 'layer.kernel' before '='");
        const std::string digits = key.substr(dot + 1);
        if (!std::all_of(digits.begin(), digits.end(), [](unsigned char c) { return std::isdigit(c); }))
            throw ParseError(line_no, dot + 2, "kernel index must be a number");
        if (label.empty()) throw ParseError(line_no, eq + 2, "empty label");
        map.set(key.substr(0, dot), static_cast<KernelIndex>(std::stoul(digits)), label);
    }
    return map;
}

LabelMap LabelMap::load(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open " + file.string());
    std::stringstream text;
    text << in.rdbuf();
    return parse(text.str());
}

std::string render_rules(const Program& p, const LabelMap& labels) {
    return serialise(p, namer_for(labels));
}

std::string explain_sample(const Program& p, const Dataset& d, SampleIndex sample, const LabelMap& labels) {
    if (sample >= d.n_samples()) throw std::invalid_argument("sample " + std::to_string(sample) + " out of range");
    const SampleIndex one[] = {sample};
    const ClassDecision dec = decide_samples(p, d, one).front();
    const KernelNamer name = namer_for(labels);
    const auto& classes = d.manifest.class_names;

    std::ostringstream out;
    out << "sample " << sample;
    if (d.manifest.image_refs) out << " (" << (*d.manifest.image_refs)[sample] << ')';
    out << "\npredicted: " << (dec.cls ? classes[*dec.cls] : std::string("abstain")) << (dec.conflict ? " (conflict)" : "")
        << "\nteacher:   " << classes[d.teacher[sample]] << "\ntruth:     " << classes[d.labels[sample]] << '\n';
    if (!dec.cls) out << "no output rule fired\n";
    if (!dec.trace.empty()) out << "fired rules:\n";
    for (const auto& f : dec.trace) {
        const Rule& r = p.rulesets[f.boundary].rules[f.rule];
        out << "  [" << p.rulesets[f.boundary].from_layer << " -> " << p.rulesets[f.boundary].to_layer << " #"
            << f.rule + 1 << "] " << render_rule(p, f.boundary, r, name)
            << (dec.decisive && *dec.decisive == f ? "  <= decisive" : "") << '\n';
    }
    return out.str();
}

} // namespace convlogic
