#pragma once

#include <stdexcept>
#include <string>

namespace mmttt {

// Shapes that cannot be combined by an op.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Index outside the valid range (token ids, gather positions, targets).
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// API misuse: non-scalar backward root, empty gather, fully padded keys.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// An op produced NaN or Inf. The message names the producing op.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dataset parse or validation failure (CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training loss became non-finite (CLI exit code 4).
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mmttt
