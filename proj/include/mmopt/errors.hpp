#pragma once

#include <stdexcept>
#include <string>

namespace mmopt {

// Bad configuration file or unknown registry id.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A standing model assumption failed validation.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Solver breakdown: denominator guard, overflow, step rejection.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mmopt
