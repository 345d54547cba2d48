#pragma once

#include <stdexcept>
#include <string>

namespace ceb {

/// Input violates a documented precondition (normalization, ranges, shapes).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The model cannot provide the requested quantity (e.g. a rate from a
/// deterministic network).
class CapabilityError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace ceb
