#pragma once

#include <stdexcept>
#include <string>

namespace fednar {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mismatched ParamVector / Batch dimensions.
struct DimensionError : Error {
  using Error::Error;
};

// A NaN or Inf escaped an arithmetic operation.
struct NumericError : Error {
  using Error::Error;
};

// Caller violated an operation's precondition.
struct PreconditionError : Error {
  using Error::Error;
};

// Malformed CSV input.
struct DataError : Error {
  using Error::Error;
};

// Bad experiment configuration (CLI exit code 1).
struct ConfigError : Error {
  using Error::Error;
};

// A runtime theory check failed (CLI exit code 2). Always indicates a bug.
struct DiagnosticError : Error {
  using Error::Error;
};

}  // namespace fednar
