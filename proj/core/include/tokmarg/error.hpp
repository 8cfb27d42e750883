#pragma once

#include <stdexcept>
#include <string>

namespace tokmarg {

// Bad input: malformed files, invalid ids, out-of-range parameters.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A configured resource bound (enumeration limit, path budget) was exceeded.
class LimitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failure reported by, or while talking to, a scoring backend.
class ScorerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tokmarg
