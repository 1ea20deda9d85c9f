#pragma once

#include <stdexcept>
#include <string>

namespace fusionlab {

// Base of every error raised by the library. The CLI maps NumericError to
// exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameter or model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dataset content that violates the manifest contract.
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed file (bad magic, truncation, unparsable manifest line).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Caller broke an API precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered during training or a metric that is undefined.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace fusionlab
