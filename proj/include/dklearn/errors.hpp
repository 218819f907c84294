#pragma once

#include <stdexcept>
#include <string>

namespace dklearn {

/// Mismatched matrix/vector dimensions.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

/// Invalid configuration value or combination.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// Numerical failure: non-finite values, Cholesky breakdown, divergent fit.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed or inconsistent on-disk data.
class IngestError : public std::runtime_error {
 public:
  explicit IngestError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dklearn
