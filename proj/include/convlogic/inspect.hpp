#pragma once

#include "convlogic/common.hpp"
#include "convlogic/program.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace convlogic {

struct Dataset;

struct ProfileEntry {
    SampleIndex sample = 0;
    float norm = 0.0f;
    std::optional<std::string> image_ref;
};

/// The m training samples that activate one kernel most strongly.
struct KernelProfile {
    std::string layer;
    KernelIndex kernel = 0;
    std::vector<ProfileEntry> top;  // norms descending, ties by lower sample index
};

KernelProfile top_m(const Dataset& d, const std::string& layer, KernelIndex kernel, std::size_t m);
std::string format_profile(const KernelProfile& profile);

/// Manual kernel labels keyed by (layer, kernel).
class LabelMap {
public:
    void set(const std::string& layer, KernelIndex kernel, std::string label);
    const std::string* find(std::string_view layer, KernelIndex kernel) const;
    bool empty() const { return labels_.empty(); }
    std::size_t size() const { return labels_.size(); }

    /// One "layer.kernel = label" per line; '#' starts a comment.
    static LabelMap parse(std::string_view text);
    static LabelMap load(const std::filesystem::path& file);

private:
    std::map<std::pair<std::string, KernelIndex>, std::string, std::less<>> labels_;
};

/// Program text with labelled kernels shown by label; other kernels keep "<layer>.<k>".
std::string render_rules(const Program& p, const LabelMap& labels);

/// Human-readable account of one sample: predicted, teacher and true class, and every
/// rule that fired on its quantised entry-layer bits.
std::string explain_sample(const Program& p, const Dataset& d, SampleIndex sample, const LabelMap& labels);

} // namespace convlogic
