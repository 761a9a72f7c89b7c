#pragma once

#include <stdexcept>
#include <string>

namespace kanmix {

// Bad user input: malformed config, unknown key, out-of-range value.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor/layer shapes.
struct dim_error : std::runtime_error {
    explicit dim_error(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf produced by a numeric op, or a diverged training run.
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// File not found, parse failure, write failure.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace kanmix
