#pragma once

#include <stdexcept>
#include <string>

namespace nucseg {

/// Bad arguments to a library call (sizes, ranges, unknown ids).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent input data: files, dimensions, parse failures.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A checked invariant did not hold (e.g. a gradient check failed).
class InvariantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nucseg
