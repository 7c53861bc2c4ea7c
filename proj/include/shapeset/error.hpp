#pragma once

#include <stdexcept>
#include <string>

namespace shapeset {

/// Broad failure class. Maps onto CLI exit codes and HTTP status codes.
enum class ErrorKind {
  Usage = 1,       // bad flags, bad arguments
  Validation = 2,  // malformed data, domain violations, config mismatch
  Numerical = 3,   // non-finite values, singular systems, rank deficiency
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& message)
      : Error(ErrorKind::Usage, message) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& message)
      : Error(ErrorKind::Validation, message) {}
};

/// Raised when a checkpoint or model file disagrees with the expected config.
class ConfigMismatchError : public ValidationError {
 public:
  explicit ConfigMismatchError(const std::string& message)
      : ValidationError(message) {}
};

/// Raised for truncated or checksum-failing files.
class CorruptFileError : public ValidationError {
 public:
  explicit CorruptFileError(const std::string& message)
      : ValidationError(message) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& message)
      : Error(ErrorKind::Numerical, message) {}
};

}  // namespace shapeset
