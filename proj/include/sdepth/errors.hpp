#pragma once

#include <stdexcept>
#include <string>

namespace sdepth {

// Error taxonomy. Everything thrown by the library derives from Error so a
// caller can catch one type at the process boundary.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Extent or element-count disagreements.
struct ShapeError : Error {
  using Error::Error;
};

// Violated API preconditions (non-scalar loss, stale node ids, ...).
struct ContractError : Error {
  using Error::Error;
};

// Invalid configuration values.
struct ConfigError : Error {
  using Error::Error;
};

// Empty or unusable datasets.
struct DataError : Error {
  using Error::Error;
};

// Malformed files, streams, or checkpoints.
struct FormatError : Error {
  using Error::Error;
};

// Empty valid-pixel sets in projection or metric computations.
struct DegenerateError : Error {
  using Error::Error;
};

// Backward requested across an op with no backward rule.
struct UnsupportedOpError : Error {
  using Error::Error;
};

}  // namespace sdepth
