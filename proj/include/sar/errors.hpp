#pragma once

#include <stdexcept>
#include <string>

namespace sar {

// Root of every error raised by the library. The CLI maps subclasses to
// exit codes: validation-style errors -> 1, IoError -> 2, NumericError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape, size or alignment mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-range hyperparameter or configuration value.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Malformed input data: bad file contents, template without a slot,
// duplicate names, unknown config keys.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Zero-norm vectors, non-finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace sar
