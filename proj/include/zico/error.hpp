#pragma once

#include <stdexcept>
#include <string>

namespace zico {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform, or an extent is non-positive.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A numeric argument or configuration value is out of its legal range.
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file or document. Carries the 1-based line when known.
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace zico
