#pragma once

#include <stdexcept>

namespace gkedm {

// Base class for all library errors. The CLI maps NumericError to exit
// code 2 and every other Error to exit code 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };     // incompatible tensor shapes
struct ContractError : Error { using Error::Error; };      // caller broke a precondition
struct DegenerateRowError : Error { using Error::Error; }; // softmax row with no entries
struct ConfigError : Error { using Error::Error; };        // invalid configuration value
struct ParseError : Error { using Error::Error; };         // malformed input file
struct ValidationError : Error { using Error::Error; };    // well-formed file, inconsistent content
struct NumericError : Error { using Error::Error; };       // divergence or no convergence
struct OracleError : Error { using Error::Error; };        // gradient-check precondition failed

}  // namespace gkedm
