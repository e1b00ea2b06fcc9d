#pragma once

#include <stdexcept>
#include <string>

namespace tfm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An argument violates a documented precondition.
class ValueError : public Error {
 public:
  using Error::Error;
};

/// File could not be read, written or parsed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace tfm
