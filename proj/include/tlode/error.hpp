#pragma once

#include <stdexcept>
#include <string>

namespace tlode {

// Bad user input: malformed config, unknown keys, invalid hyperparameters.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure at runtime: non-finite values, step-size underflow,
// violated preconditions of a numeric routine.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem / serialization failure: unreadable file, checksum mismatch,
// unsupported format version.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Internal contract violation (shape mismatch, invalid op arguments).
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tlode
