#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace drrel {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument outside the documented domain (e.g. a position not in 1..K).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An estimator was asked to summarize zero interactions.
class EmptyDataError : public Error {
 public:
  using Error::Error;
};

/// A propensity of zero was encountered for an observed position.
class PropensityError : public Error {
 public:
  using Error::Error;
};

/// Two parallel sequences have different lengths.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

/// Randomized logs do not cover every position (or have no clicks at the top).
class CoverageError : public Error {
 public:
  using Error::Error;
};

/// Training data with a single class.
class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

/// Shape mismatch between a model and its input, or a stale forward cache.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Loss became non-finite during training.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// A persisted file has an unexpected format or schema version.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// An artifact was produced under a different configuration.
class StaleArtifactError : public Error {
 public:
  using Error::Error;
};

/// An upstream artifact does not exist. The message names the producing stage.
class MissingArtifactError : public StaleArtifactError {
 public:
  using StaleArtifactError::StaleArtifactError;
};

/// An internal contract was broken (e.g. a frozen model changed during training).
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace drrel
