#pragma once

#include <charconv>
#include <string>
#include <system_error>

#include "kanmix/errors.hpp"

namespace kanmix {

/// Shortest decimal form that round-trips to the same double. Used for every
/// numeric value written to CSV/JSON artifacts so reruns are byte-identical.
inline std::string format_double(double v) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    const auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc() || res.ptr != end)
        throw io_error("cannot parse '" + s + "' as a number");
    return v;
}

} // namespace kanmix
