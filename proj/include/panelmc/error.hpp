#pragma once

#include <stdexcept>
#include <string>

namespace panelmc {

/// Coarse failure classes. The CLI maps them onto exit codes 2, 3 and 4.
enum class ErrorKind { validation, numerical, io };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Bad input, bad configuration or an unsatisfiable precondition.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

/// Input file lacks a required column.
class SchemaError : public ValidationError {
 public:
  explicit SchemaError(const std::string& what) : ValidationError("schema: " + what) {}
};

/// Configuration tables (aggregate map, class table, ...) do not cover the data.
class ConfigError : public ValidationError {
 public:
  explicit ConfigError(const std::string& what) : ValidationError("config: " + what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

}  // namespace panelmc
