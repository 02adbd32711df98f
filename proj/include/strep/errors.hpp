#pragma once

#include <stdexcept>
#include <string>

namespace strep {

// Bad arguments or shapes passed by the caller.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation produced a non-finite value or diverged.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File could not be read/written, or its contents failed validation.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The simulator could not produce a valid trajectory or scan.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw UsageError(what);
}

}  // namespace detail
}  // namespace strep
