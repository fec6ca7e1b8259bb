#include "convlogic/quantise.hpp"

#include "convlogic/dataset_io.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace convlogic {

double l1_norm(std::span<const float> activation) {
    double sum = 0.0;
    for (float v : activation) {
        if (!std::isfinite(v)) throw std::domain_error("l1_norm: non-finite activation");
        sum += std::fabs(static_cast<double>(v));
    }
    return sum;
}

ThresholdVector compute_thresholds(const NormMatrix& norms, std::span<const SampleIndex> train) {
    if (train.empty()) throw DataError("cannot compute thresholds from an empty training split");
    ThresholdVector theta(norms.cols);
    std::vector<double> sums(norms.cols, 0.0);
    for (auto i : train) {
        if (i >= norms.rows) throw DataError("training index out of range");
        const auto row = norms.row(i);
        for (std::size_t k = 0; k < norms.cols; ++k) sums[k] += row[k];
    }
    const auto count = static_cast<double>(train.size());
    for (std::size_t k = 0; k < norms.cols; ++k) {
        // largest float not above the mean: for float x, x > theta iff x > mean
        const double mean = sums[k] / count;
        float t = static_cast<float>(mean);
        if (static_cast<double>(t) > mean) t = std::nextafter(t, -std::numeric_limits<float>::infinity());
        theta[k] = t;
    }
    return theta;
}

BitVector quantise_row(std::span<const float> norms, const ThresholdVector& thresholds) {
    if (norms.size() != thresholds.size())
        throw DataError("quantise: " + std::to_string(norms.size()) + " norms for " +
                        std::to_string(thresholds.size()) + " thresholds");
    BitVector bits(norms.size());
    for (std::size_t k = 0; k < norms.size(); ++k) bits[k] = norms[k] > thresholds[k] ? 1 : -1;
    return bits;
}

BitMatrix quantise(const NormMatrix& norms, const ThresholdVector& thresholds) {
    if (norms.cols != thresholds.size())
        throw DataError("quantise: matrix has " + std::to_string(norms.cols) + " kernels, threshold vector has " +
                        std::to_string(thresholds.size()));
    BitMatrix bits(norms.rows, norms.cols);
    for (std::size_t i = 0; i < norms.rows; ++i)
        for (std::size_t k = 0; k < norms.cols; ++k) bits.at(i, k) = norms.at(i, k) > thresholds[k] ? 1 : -1;
    return bits;
}

std::map<std::string, LayerBits> binarise_dataset(const Dataset& d, std::span<const std::string> layers,
                                                  unsigned jobs) {
    std::vector<LayerBits> results(layers.size());
    for (const auto& name : layers) d.layer_position(name);  // unknown names fail before any work
    const auto train = d.split("train");
    parallel_for(layers.size(), jobs, [&](std::size_t li) {
        const std::string& name = layers[li];
        LayerBits& out = results[li];
        if (name == kOutputLayer) {
            out.bits = BitMatrix(d.n_samples(), d.n_classes());
            for (std::size_t i = 0; i < d.n_samples(); ++i) out.bits.at(i, d.teacher[i]) = 1;
            return;
        }
        const NormMatrix& norms = d.layer_norms(name);
        out.thresholds = compute_thresholds(norms, train);
        out.bits = quantise(norms, out.thresholds);
    });
    std::map<std::string, LayerBits> by_name;
    for (std::size_t li = 0; li < layers.size(); ++li) by_name.emplace(layers[li], std::move(results[li]));
    return by_name;
}

} // namespace convlogic
