#pragma once

#include <stdexcept>
#include <string>

namespace advrm {

// Invalid or inconsistent configuration (bad dimensions, degenerate settings).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

// Non-finite values or other numeric failures during computation.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

// Operation invoked before its prerequisites were established.
class StateError : public std::runtime_error {
 public:
  explicit StateError(const std::string& msg) : std::runtime_error("state error: " + msg) {}
};

}  // namespace advrm
