#pragma once

#include <stdexcept>
#include <string>

namespace capsan {

// Bad run configuration: unknown keys, invalid hyperparameters, unusable files.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user-supplied data: out-of-vocab tokens, over-long sequences, malformed inputs.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values encountered mid-computation.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace capsan
