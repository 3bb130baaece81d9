#pragma once

#include <stdexcept>
#include <string>

namespace polysketch {

/// Invalid configuration or argument values (bad parameters, malformed file, ...).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Shape mismatches between operands.
class DimensionError : public std::runtime_error {
 public:
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failures (factorization breakdown after jitter escalation, ...).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace polysketch
