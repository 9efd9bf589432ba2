#pragma once

#include <stdexcept>
#include <string>

namespace beamilc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A simulation produced a non-finite state.
class IntegrationBlowup : public Error {
 public:
  using Error::Error;
};

/// The static pendulum equation has no root in (-pi, pi).
class NoEquilibrium : public Error {
 public:
  using Error::Error;
};

/// Sampling grids that must nest (plant step, estimation, control) do not.
class GridMismatch : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

inline void require_dim(long actual, long expected, const char* what) {
  if (actual != expected) {
    throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(expected) +
                         ", got " + std::to_string(actual));
  }
}

}  // namespace beamilc
