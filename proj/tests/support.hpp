#pragma once

#include "convlogic/dataset_io.hpp"
#include "convlogic/program.hpp"

#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

namespace testing {

// Scratch directory removed on scope exit.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("convlogic_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::filesystem::path operator/(const std::string& s) const { return path / s; }
};

// Program over a single boundary "in" -> output, rules given in program text.
inline convlogic::Program single_boundary(std::size_t kernels, std::size_t classes, const std::string& rules) {
    std::string text = "[program]\nversion = 1\nlayers = in:" + std::to_string(kernels) +
                       ", output:" + std::to_string(classes) + "\nclasses = ";
    for (std::size_t c = 0; c < classes; ++c) text += (c ? ", c" : "c") + std::to_string(c);
    text += "\ndepth = 5\nalpha = 0.01\ndemand_driven = true\n\n[thresholds in]\n";
    for (std::size_t k = 0; k < kernels; ++k) text += "k" + std::to_string(k) + " = 0.5\n";
    text += "\n[rules in -> output]\n" + rules;
    return convlogic::parse_program(text);
}

inline convlogic::BitVector bits_of(std::uint64_t mask, std::size_t k) {
    convlogic::BitVector v(k);
    for (std::size_t i = 0; i < k; ++i) v[i] = (mask >> i) & 1 ? 1 : -1;
    return v;
}

} // namespace testing
