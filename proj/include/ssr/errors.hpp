#pragma once

#include <stdexcept>
#include <string>

namespace ssr {

// Exception hierarchy shared by all modules. The CLI maps each family onto a
// stable exit code (config 2, data 3, numerical 4).

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed configuration, unknown keys, invalid parameters.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Inconsistent inputs: shape mismatches, corrupt files, out-of-range data.
class DataError : public Error {
public:
    using Error::Error;
};

/// Divergence, degenerate geometry, or any other numerical failure.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace ssr
