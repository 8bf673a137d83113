#pragma once

#include <stdexcept>
#include <string>

namespace eqpose {

/// A precondition of a library call was violated by the caller.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed or missing on-disk data (PLY, CSV, checkpoint, manifest).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid run configuration. The message lists every violated field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or a degenerate numerical problem.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define EQPOSE_EXPECT(cond, msg)                                    \
  do {                                                              \
    if (!(cond)) throw ::eqpose::ContractViolation(std::string(msg)); \
  } while (false)

}  // namespace eqpose
