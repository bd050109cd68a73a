#pragma once

#include <stdexcept>
#include <string>

namespace sliceforge {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition or argument violation (bad shape, out-of-range index, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Unreadable, unwritable or malformed file.
class IoError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced or encountered where the contract demands finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A split places samples of one subject on both sides of a fold.
class LeakageError : public Error {
 public:
  using Error::Error;
};

}  // namespace sliceforge
