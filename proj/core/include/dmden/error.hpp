#pragma once

#include <stdexcept>
#include <string>

namespace dmden {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or out-of-contract parameter value.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Step or element index outside its valid range.
class IndexError : public ParameterError {
 public:
  using ParameterError::ParameterError;
};

/// Factorization failure, underflow, non-finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File missing, unreadable, or malformed on disk.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace dmden
