#pragma once

#include <stdexcept>
#include <string>

namespace htmpc {

/// Malformed inputs: unreadable files, dimension mismatches, violated invariants.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Numerical breakdowns: indefinite Hessians, non-finite iterates, failed factorizations.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw DataError(msg);
}

inline void require_numeric(bool cond, const std::string& msg) {
  if (!cond) throw NumericError(msg);
}

}  // namespace htmpc
