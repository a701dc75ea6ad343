#pragma once

#include <stdexcept>
#include <string>

namespace nimaenh {

// Root of every error thrown by the library. The CLI maps the three
// families below onto process exit codes (2, 3, 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid arguments, configs, shapes, or sizes. Exit code 2.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ShapeError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class UnboundInputError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// File system, parsing, and checkpoint integrity failures. Exit code 3.
class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public IoError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : IoError(what + " (at byte " + std::to_string(offset) + ")"), message_(what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }
  // what() without the offset suffix.
  const std::string& message() const noexcept { return message_; }

 private:
  std::string message_;
  std::size_t offset_;
};

class UnsupportedFormatError : public IoError {
 public:
  using IoError::IoError;
};

class CorruptCheckpointError : public IoError {
 public:
  using IoError::IoError;
};

class VersionMismatchError : public IoError {
 public:
  using IoError::IoError;
};

// Non-finite losses or parameters during training. Exit code 4.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace nimaenh
