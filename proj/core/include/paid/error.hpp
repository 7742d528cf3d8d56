#pragma once

#include <stdexcept>
#include <string>

namespace paid {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A scalar parameter is outside its admissible range (e.g. temperature <= 0).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition (non-scalar backward seed,
/// non-normalized distributions, empty inputs, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Requested behaviour is not supported for this input.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite or exploding loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Run configuration could not be parsed or validated.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Binary file could not be read or written.
class FormatError : public Error {
 public:
  enum class Kind { io, bad_magic, bad_version, truncated, label_out_of_range, value_out_of_range };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  [[nodiscard]] Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace paid
