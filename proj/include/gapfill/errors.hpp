#pragma once

#include <stdexcept>
#include <string>

namespace gapfill {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Two locations or point sets live in different coordinate frames.
class FrameMismatchError : public Error {
 public:
  using Error::Error;
};

/// A precondition on an argument was violated.
class InvalidArgumentError : public Error {
 public:
  using Error::Error;
};

/// A covariance factorization failed even after the jitter ladder was exhausted.
class ConditioningError : public Error {
 public:
  using Error::Error;
};

/// An iterative fit produced a non-finite objective.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// File, parse or format errors. Carries the offending line when known.
class IoError : public Error {
 public:
  explicit IoError(const std::string& what, long line = -1)
      : Error(line >= 0 ? what + " (line " + std::to_string(line) + ")" : what), message_(what), line_(line) {}
  long line() const { return line_; }
  /// The description without the line suffix.
  const std::string& message() const { return message_; }

 private:
  std::string message_;
  long line_;
};

}  // namespace gapfill
