#pragma once

#include <cstdio>
#include <string>

namespace tags {

// Shortest round-trippable decimal form; keeps CSV output byte-stable.
inline std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace tags
