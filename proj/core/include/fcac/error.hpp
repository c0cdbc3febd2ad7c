#pragma once

#include <stdexcept>
#include <string>

namespace fcac {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not line up for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An argument is outside the domain of the operation.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// The object is in a state that forbids the operation (e.g. training a frozen model).
class StateError : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or corrupted file content.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Violations of the session protocol: label collisions, bad shot counts, overlapping sessions.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or manifest.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace fcac
