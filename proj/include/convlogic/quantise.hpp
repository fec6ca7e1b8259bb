#pragma once

#include "convlogic/common.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace convlogic {

struct Dataset;

/// Per-kernel thresholds of one layer. Stored as float32 so that the 9-significant-digit
/// text form in a program file reproduces them exactly.
using ThresholdVector = std::vector<float>;

/// Sum of absolute values of an activation map. Throws std::domain_error on non-finite input.
double l1_norm(std::span<const float> activation);

/// Mean norm of each kernel over `train` rows, accumulated in index order in double
/// precision and rounded down to float, so comparing a float norm against it is the same
/// as comparing against the mean itself. Throws DataError for an empty split.
ThresholdVector compute_thresholds(const NormMatrix& norms, std::span<const SampleIndex> train);

/// 1 iff the norm strictly exceeds the kernel's threshold, else -1.
BitMatrix quantise(const NormMatrix& norms, const ThresholdVector& thresholds);
BitVector quantise_row(std::span<const float> norms, const ThresholdVector& thresholds);

struct LayerBits {
    BitMatrix bits;
    // Empty for the output layer, whose bits are the teacher's one-hot predictions.
    ThresholdVector thresholds;
};

/// Binarises the named layers over all samples. Convolutional layers are thresholded on
/// the training split; "output" becomes the one-hot teacher prediction.
std::map<std::string, LayerBits> binarise_dataset(const Dataset& d, std::span<const std::string> layers,
                                                  unsigned jobs = 1);

} // namespace convlogic
