#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace segforge {

// Every failure raised by the library derives from Error. The CLI maps the
// subclasses onto exit codes: ConfigError -> 2, DataError -> 3, anything else -> 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor dimensions that do not fit an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A caller broke an API precondition (bad argument, misuse of the tape).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents. `offset` is the byte position where parsing failed.
class FormatError : public DataError {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : DataError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace segforge
