#pragma once

#include <stdexcept>
#include <string>

namespace gpcseg {

// Root of every error raised by the library. The CLI maps the subclasses
// onto exit codes, so new error kinds should derive from one of these.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

class ShapeError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "shape"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

class FormatError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "format"; }
};

class NumericalError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numerical"; }
};

// Raised when a distance metric is requested on an empty structure.
class EmptyStructureError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "empty_structure"; }
};

}  // namespace gpcseg
