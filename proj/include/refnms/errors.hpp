#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace refnms {

// Base of every error thrown by the library. The CLI maps each subclass to a
// distinct exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed text input. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Input parses but violates a declared layout (feature length, dimension).
class SchemaError : public Error {
 public:
  using Error::Error;
};

// A value lies outside its allowed range (confidence > 1, ...).
class RangeError : public Error {
 public:
  using Error::Error;
};

// Array or parameter shapes disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or a failed numerical check.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Caller asked for something the inputs cannot provide (empty dataset, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace refnms
