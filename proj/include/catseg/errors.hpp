#pragma once

#include <stdexcept>
#include <string>

namespace catseg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or volume extents that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration: taxonomy, group links, train config, CLI flags.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation (e.g. tau <= 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// NaN / Inf encountered where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

}  // namespace catseg
