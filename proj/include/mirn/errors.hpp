#pragma once

#include <stdexcept>
#include <string>

namespace mirn {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// In-memory contract violations: bad extents, mismatched operands.
struct ShapeError : Error {
  using Error::Error;
};

// Malformed file content (WFDB headers/signals, weight and dataset files).
struct ParseError : Error {
  using Error::Error;
};

struct BadMagicError : ParseError {
  using ParseError::ParseError;
};

struct TruncatedError : ParseError {
  using ParseError::ParseError;
};

// A stored array's name or extents disagree with what the loader expects.
struct ArrayMismatchError : ParseError {
  using ParseError::ParseError;
};

struct ConfigError : Error {
  using Error::Error;
};

struct EmptyDataError : Error {
  using Error::Error;
};

}  // namespace mirn
