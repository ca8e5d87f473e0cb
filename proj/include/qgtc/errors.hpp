#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qgtc {

// All library failures derive from qgtc::Error so callers can catch one type.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Invalid numeric parameters (quantization ranges, BN variance, bit widths).
class ParameterError : public Error {
public:
  using Error::Error;
};

// Bad element values (non-finite reals, non-binary bits).
class DataError : public Error {
public:
  using Error::Error;
};

// Internally inconsistent containers (word counts, plane dims).
class StructureError : public Error {
public:
  using Error::Error;
};

// Corrupt or truncated serialized payloads.
class FormatError : public Error {
public:
  using Error::Error;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

class OverflowError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

class ParseError : public Error {
public:
  ParseError(std::size_t line, const std::string &what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

} // namespace qgtc
