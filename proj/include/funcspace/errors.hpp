#pragma once

#include <stdexcept>
#include <string>

namespace funcspace {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid experiment, architecture, or optimizer configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dimension mismatch between tensors, batches, or parameter vectors.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. requesting gradients from a batch without targets.
class UsageError : public Error {
 public:
  using Error::Error;
};

// File and serialization problems.
class IoError : public Error {
 public:
  using Error::Error;
};

// IDX container parsing failures, with the failure class preserved so
// callers can distinguish a wrong file from a damaged one.
class IdxError : public IoError {
 public:
  enum class Kind { BadMagic, Truncated, CountMismatch };

  IdxError(Kind kind, const std::string& what) : IoError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace funcspace
