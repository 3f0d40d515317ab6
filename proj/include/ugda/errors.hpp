#pragma once

#include <stdexcept>
#include <string>

namespace ugda {

// Configuration / usage mistakes: bad keys, shape mismatches, missing files.
// The CLI maps these to exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failures mid-run (NaN/Inf losses, corrupt checkpoints).
// The CLI maps these to exit code 3.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace ugda
