#pragma once

#include <stdexcept>
#include <string>

namespace dart {

/// Shape or length disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid run or model configuration. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The pruning budget cannot be placed inside the clamp interval. Exit code 3.
class InfeasibleBudget : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operation invoked on an object that is not ready for it (empty window,
/// uninitialized detector, full accumulator).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed weight or trace file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require_dims(bool ok, const char* what) {
  if (!ok) throw DimensionError(what);
}

}  // namespace detail
}  // namespace dart
