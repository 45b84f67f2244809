#pragma once

#include <stdexcept>
#include <string>

namespace qdcascade {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A parameter is non-finite, out of range or otherwise unusable.
class InvalidParameter : public Error {
 public:
  using Error::Error;
};

/// Matrix or vector dimensions do not agree with the state basis.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A function was evaluated outside its domain (e.g. g2_positive at tau <= 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// The rate-equation generator has a null space of dimension != 1.
class DegenerateSteadyState : public Error {
 public:
  using Error::Error;
};

/// Operation not allowed in the object's current state (e.g. convolving twice).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Carries the byte or line offset of the failure.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Well-formed input whose content violates an invariant (e.g. unsorted time tags).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent fit or model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace qdcascade
