#pragma once

#include <stdexcept>
#include <string>

namespace latmom {

// The three families map onto the CLI exit codes 2, 3 and 4.

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ComputationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class QuadratureError : public ComputationError {
 public:
  using ComputationError::ComputationError;
};

}  // namespace latmom
