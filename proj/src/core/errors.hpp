#pragma once

#include <stdexcept>
#include <string>

namespace gsf {

// Error taxonomy. The C API and CLI map these onto exit codes:
// usage-class failures (bad shapes, bad config, API misuse) -> 1,
// data failures (corrupt or missing files) -> 2, numeric failures -> 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operand shapes are inconsistent with the operation.
struct ShapeError : Error {
  using Error::Error;
};

// A configuration value is out of its legal domain.
struct ConfigError : Error {
  using Error::Error;
};

// The API was called in a way its contract forbids.
struct UsageError : Error {
  using Error::Error;
};

// A file or stream did not parse.
struct DataError : Error {
  using Error::Error;
};

// A computation produced non-finite values or failed a numeric check.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace gsf
