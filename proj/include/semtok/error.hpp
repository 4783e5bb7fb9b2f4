#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace semtok {

// Every library failure derives from Error so callers (notably the CLI) can
// map categories onto exit codes without string matching.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Numerically degenerate input: fully masked softmax row, zero-power signal.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class CorruptionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ShapeError : public FormatError {
 public:
  using FormatError::FormatError;
};

// `pointer()` is the JSON pointer of the offending value ("" when the error
// concerns the config as a whole).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message, std::string pointer = {})
      : Error(pointer.empty() ? message : pointer + ": " + message), pointer_(std::move(pointer)) {}
  const std::string& pointer() const { return pointer_; }

 private:
  std::string pointer_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

// Loss became NaN/inf during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace semtok
