#pragma once

#include <stdexcept>
#include <string>

namespace lshr {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape / axis mismatch. Messages name the offending axes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// API misuse (backward on empty tape, non-scalar loss, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File I/O, parsing and format validation failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Training aborted (non-finite loss, missing gradient, ...).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace lshr
