#ifndef FLIP_ERRORS_HPP_
#define FLIP_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace flip {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or parameter geometry.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Out-of-range or duplicated index in a gather/scatter style op.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or precondition on user-supplied settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File format or filesystem failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace flip

#endif  // FLIP_ERRORS_HPP_
