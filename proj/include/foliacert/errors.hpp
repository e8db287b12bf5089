#pragma once

#include <stdexcept>
#include <string>

namespace foliacert {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed field description. Carries the 1-based source position.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, int line, int column)
      : Error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
              message),
        line_(line),
        column_(column) {}

  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

/// A structurally valid input that violates a domain constraint.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Domain violation while evaluating an expression (division by zero, sqrt of a negative).
class EvalError : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure failed to deliver a trustworthy answer.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A requested bound cannot be certified (negative discriminant, unavailable Lipschitz constant...).
class BoundError : public Error {
 public:
  using Error::Error;
};

}  // namespace foliacert
