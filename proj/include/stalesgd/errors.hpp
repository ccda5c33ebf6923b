#pragma once

#include <stdexcept>
#include <string>

namespace stalesgd {

// Bad user input: invalid parameters, malformed files, dimension mismatch.
struct validation_error : std::runtime_error {
    explicit validation_error(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure: non-convergent series, degenerate normalization.
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

// Operation not defined for the given variant (e.g. constants() on an MLP).
struct unsupported_error : std::runtime_error {
    explicit unsupported_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace stalesgd
