#pragma once

#include <stdexcept>
#include <string>

namespace advdiff {

/// Base of every exception thrown by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity appeared where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or parameter record.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A required file (checkpoint, manifest, dataset) is missing or unusable.
class ArtifactError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content. Carries the 1-based line number when known.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, long line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  long line() const noexcept { return line_; }

 private:
  long line_;
};

}  // namespace advdiff
