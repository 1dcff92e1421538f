#pragma once

#include <stdexcept>
#include <string>

namespace mdepth {

// Input values outside an operation's domain (non-finite pose, zero blob height, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller broke a shape or arity contract.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Unknown frame, pair, object or parameter identifier.
class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Bad run configuration: unknown keys, missing priors, unparsable values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing or malformed files on disk.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite losses, divergence, empty evaluation sets.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mdepth
