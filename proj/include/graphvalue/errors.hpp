#pragma once

#include <stdexcept>
#include <string>

namespace graphvalue {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Incompatible tensor shapes. Messages name both shapes.
struct DimensionError : Error {
  using Error::Error;
};

// NaN/Inf produced where a finite value is required.
struct NumericFault : Error {
  using Error::Error;
};

// API misuse: out-of-range label, non-scalar backward, invalid query, ...
struct ContractError : Error {
  using Error::Error;
};

// Grid-world generation could not satisfy its constraints.
struct GenerationError : Error {
  using Error::Error;
};

// File / format problems. Messages carry the offending path or line.
struct ParseError : Error {
  using Error::Error;
};

}  // namespace graphvalue
