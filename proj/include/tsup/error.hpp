#pragma once

#include <stdexcept>
#include <string>

namespace tsup {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition of an operation was violated (shapes, ranges, flags).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A vector or a batch had zero norm where a direction was required.
class ZeroNormError : public Error {
 public:
  using Error::Error;
};

/// An iterative routine stopped before reaching its tolerance.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf showed up where the computation requires finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace tsup
