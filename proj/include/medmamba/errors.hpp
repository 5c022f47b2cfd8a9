#pragma once

#include <stdexcept>
#include <string>

namespace medmamba {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside an operation's mathematical domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Class index or similar out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data (CSV, manifest, labels).
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or failed numerical checks.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public IoError {
 public:
  enum class Kind { bad_magic, version_mismatch, truncated, bad_header };

  CheckpointError(Kind kind, const std::string& what) : IoError(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace medmamba
