#pragma once

#include <stdexcept>
#include <string>

namespace ganf {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation (e.g. log of a non-positive value).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Object used in a state that forbids the call (e.g. backward twice on one tape).
class StateError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A caller-side precondition was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file, checkpoint or config.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value; `field()` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace ganf
