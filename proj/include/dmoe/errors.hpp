#pragma once

#include <stdexcept>
#include <string>

namespace dmoe {

// Bad configuration (flags, config files, incompatible sizes chosen by the user).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unreadable, malformed, or inconsistent data files.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dmoe
