#pragma once

#include <stdexcept>
#include <string>

namespace spfde {

// Error categories map 1:1 onto the CLI exit codes (see tools/).
//   ConfigError   -> 2   bad configuration / invalid arguments
//   DataError     -> 3   bad input data or file format
//   PlanningError -> 4   unreachable budget targets
//   InternalError -> 5   broken invariants, contract misuse
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PlanningError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InternalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse (e.g. backward on a spent tape, pruning a frozen layer).
// Reported with the internal-invariant exit code.
class UsageError : public InternalError {
 public:
  using InternalError::InternalError;
};

}  // namespace spfde
