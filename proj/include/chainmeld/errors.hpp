#pragma once

#include <stdexcept>
#include <string>

namespace chainmeld {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dimensions or layouts that do not line up (wrong block sizes, bad indices).
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// A submodel joint has mass where its own prior marginal has none.
class ModelInconsistencyError : public Error {
 public:
  using Error::Error;
};

/// Invalid pooling or sampler configuration (missing marginals, bad weights, ...).
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

/// The requested combination is valid but not supported by this implementation.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// Non-finite or otherwise unusable numerical results.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A covariance (or precision) matrix that cannot be factorized reliably.
class SingularError : public Error {
 public:
  using Error::Error;
};

/// No starting state with finite target density could be found.
class InitializationError : public Error {
 public:
  using Error::Error;
};

}  // namespace chainmeld
