#pragma once

#include <stdexcept>
#include <string>

namespace replay {

// Bad argument shape or value supplied by the caller.
struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A documented precondition of a numerical routine was violated.
struct PreconditionError : std::logic_error {
  using std::logic_error::logic_error;
};

// Malformed on-disk data (bad magic, count mismatch, label out of range).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File could not be opened or was truncated.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace replay
