#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace convlogic {

/// Malformed or inconsistent input data (files, manifests, program text).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Filesystem failure while reading or writing an artifact.
class IoError : public DataError {
public:
    using DataError::DataError;
};

using SampleIndex = std::uint32_t;
using KernelIndex = std::uint32_t;

/// Row-major samples x kernels matrix of l1 activation norms.
struct NormMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> values;

    NormMatrix() = default;
    NormMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0f) {}

    float& at(std::size_t i, std::size_t k) { return values[i * cols + k]; }
    float at(std::size_t i, std::size_t k) const { return values[i * cols + k]; }
    std::span<const float> row(std::size_t i) const { return {values.data() + i * cols, cols}; }

    bool operator==(const NormMatrix&) const = default;
};

/// Row-major samples x kernels matrix of truth values, each 1 or -1.
struct BitMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::int8_t> values;

    BitMatrix() = default;
    BitMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, -1) {}

    std::int8_t& at(std::size_t i, std::size_t k) { return values[i * cols + k]; }
    std::int8_t at(std::size_t i, std::size_t k) const { return values[i * cols + k]; }
    std::span<const std::int8_t> row(std::size_t i) const { return {values.data() + i * cols, cols}; }

    bool operator==(const BitMatrix&) const = default;
};

using BitVector = std::vector<std::int8_t>;

/// A kernel literal within a known layer: the kernel itself or its negation.
struct Condition {
    KernelIndex kernel = 0;
    bool positive = true;

    bool operator==(const Condition&) const = default;
    auto operator<=>(const Condition&) const = default;
};

/// Worker count from CONVLOGIC_JOBS, or 1 when unset or invalid.
unsigned default_jobs();

/// Runs body(i) for i in [0, n) over up to `jobs` threads. Callers write results into
/// per-index slots so the outcome never depends on scheduling.
template <typename Body>
void parallel_for(std::size_t n, unsigned jobs, Body&& body);

} // namespace convlogic

#include "convlogic/detail/parallel.hpp"
