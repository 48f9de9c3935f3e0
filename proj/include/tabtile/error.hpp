#pragma once

#include <stdexcept>
#include <string>

namespace tabtile {

// Base for all library errors. Subclasses exist so callers can
// distinguish contract violations from environmental failures.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shapes do not satisfy an operation's contract.
struct DimensionError : Error {
  using Error::Error;
};

// Reduction requested over an empty axis.
struct EmptyReductionError : Error {
  using Error::Error;
};

// Attention called with zero keys (L_k = 0).
struct EmptyContextError : Error {
  using Error::Error;
};

// Invalid tile sizes, model configuration, or run parameters.
struct ConfigError : Error {
  using Error::Error;
};

// Non-finite logits entered the merge path; failing fast here keeps a
// NaN from silently spreading through the accumulators.
struct PoisonedLogitError : Error {
  using Error::Error;
};

// Memory tracking misused (nested or concurrent scopes).
struct InstrumentationError : Error {
  using Error::Error;
};

// Weight file or CSV could not be parsed.
struct FormatError : Error {
  using Error::Error;
};

// Metric is undefined for the given inputs (e.g. single-class AUC).
struct MetricError : Error {
  using Error::Error;
};

// Model inputs contain non-finite values.
struct ValidationError : Error {
  using Error::Error;
};

// Filesystem failure, reported with the offending path.
struct IoError : Error {
  using Error::Error;
};

}  // namespace tabtile
