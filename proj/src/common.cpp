#include "convlogic/common.hpp"

#include <cstdlib>
#include <string>

namespace convlogic {

unsigned default_jobs() {
    const char* env = std::getenv("CONVLOGIC_JOBS");
    if (!env || !*env) return 1;
    try {
        const unsigned long v = std::stoul(env);
        return v == 0 ? 1u : static_cast<unsigned>(v);
    } catch (const std::exception&) {
        return 1;
    }
}

} // namespace convlogic
