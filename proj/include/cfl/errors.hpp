#pragma once

#include <stdexcept>
#include <string>

namespace cfl {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched vector/feature lengths.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Nothing left to aggregate (zero weight sum, all clients dropped).
class AggregationError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk encoding (bad magic, truncation, out-of-range index).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment configuration or schema violation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dataset precondition violated (stratification, partitioning).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace cfl
