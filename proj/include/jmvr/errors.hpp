#pragma once

#include <stdexcept>
#include <string>

namespace jmvr {

// Error taxonomy mirrored by the CLI exit codes: config validation -> 2,
// data problems -> 3, numeric failures -> 4.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace jmvr
