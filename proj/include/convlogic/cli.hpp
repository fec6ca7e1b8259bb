#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace convlogic::cli {

enum ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kData = 2,
    kInternal = 3,
};

/// Runs one command line. Results go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Expands "a..b" (integers) or a comma-separated list.
std::vector<std::size_t> parse_int_range(const std::string& text);

} // namespace convlogic::cli
