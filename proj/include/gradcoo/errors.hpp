#pragma once

#include <stdexcept>
#include <string>

namespace gradcoo {

// Base class for everything this library throws on its own behalf.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shapes do not line up for the requested operation.
struct DimensionError : Error {
  using Error::Error;
};

// A token id falls outside the vocabulary.
struct TokenRangeError : Error {
  using Error::Error;
};

// A sequence does not fit the model's maximum length.
struct LengthError : Error {
  using Error::Error;
};

// A loss was requested over an empty set of positions.
struct EmptyLossError : Error {
  using Error::Error;
};

// An API precondition was violated (empty input list, non-scalar loss, ...).
struct ContractError : Error {
  using Error::Error;
};

// A serialized file is malformed or truncated.
struct FormatError : Error {
  using Error::Error;
};

// A serialized file uses a format version this build does not understand.
struct VersionError : FormatError {
  using FormatError::FormatError;
};

// Loaded data disagrees with the configuration it claims to match.
struct ConsistencyError : Error {
  using Error::Error;
};

// Training diverged or failed to make progress.
struct TrainingError : Error {
  using Error::Error;
};

// A JSONL record could not be parsed; message carries the line number.
struct ParseError : Error {
  using Error::Error;
};

// A record carries a label outside the known set.
struct LabelError : Error {
  using Error::Error;
};

// A metric is undefined for the given inputs (e.g. AUPRC with no positives).
struct UndefinedMetricError : Error {
  using Error::Error;
};

// Threshold calibration is impossible (single-class input).
struct CalibrationError : Error {
  using Error::Error;
};

// A reference set was built against a different model or granularity.
struct ReferenceIncompatibilityError : Error {
  using Error::Error;
};

}  // namespace gradcoo
