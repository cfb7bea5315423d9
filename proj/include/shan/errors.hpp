#pragma once

#include <stdexcept>
#include <string>

namespace shan {

// Error taxonomy. The CLI maps these onto exit codes:
// ConfigError -> 1, DataError -> 2, NumericError -> 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

// Tensor shape / dimension violations.
struct ShapeError : ConfigError {
  using ConfigError::ConfigError;
};

// Graph schema violations (bad ids, unknown types).
struct SchemaError : DataError {
  using DataError::DataError;
};

// Meta-path does not fit the graph schema or the target type.
struct MetaPathError : DataError {
  using DataError::DataError;
};

}  // namespace shan
