#pragma once

#include <stdexcept>
#include <string>

namespace adavid {

// Rejected input: shape mismatch, invalid width, malformed config and so on.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// File-level failures (open/read/write, bad magic, truncated records).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A numeric contract broke at runtime (NaN loss, degenerate norm, ...).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace adavid
