#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pmfuse {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A point or day lies outside the domain of a grid or a fitted model.
class OutOfDomain : public Error {
 public:
  using Error::Error;
};

/// Cholesky factorization failed even after the maximum diagonal jitter.
class NotPositiveDefinite : public Error {
 public:
  using Error::Error;
};

/// An argument lies outside the mathematical domain of a function.
class DomainError : public Error {
 public:
  using Error::Error;
};

class InsufficientData : public Error {
 public:
  using Error::Error;
};

/// Neither mixture component is available at a site-day.
class NoInputs : public Error {
 public:
  using Error::Error;
};

class TooFewRecords : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class SchemaError : public Error {
 public:
  SchemaError(const std::string& file, const std::string& column)
      : Error(file + ": missing column '" + column + "'"), column_(column) {}
  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

}  // namespace pmfuse
