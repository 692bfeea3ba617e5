#pragma once

#include <stdexcept>
#include <string>

namespace gtnp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value or a failed factorization.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An argument lies outside the mathematical domain of the function.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A file does not follow the expected on-disk layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// An experiment configuration is malformed or inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace gtnp
