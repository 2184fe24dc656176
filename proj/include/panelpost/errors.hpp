#pragma once

#include <stdexcept>
#include <string>

namespace panelpost {

// Bad inputs in a parsed dataset (CLI exit code 2).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure: degenerate columns, non-identified coefficients,
// excessive replication failures (CLI exit code 3).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Misuse of an API contract or an invalid flag combination (CLI exit code 1).
struct ArgError : std::invalid_argument {
  explicit ArgError(const std::string& msg) : std::invalid_argument(msg) {}
};

}  // namespace panelpost
