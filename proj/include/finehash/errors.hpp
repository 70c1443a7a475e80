#pragma once

#include <stdexcept>
#include <string>

namespace finehash {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Shape or dimension disagreement between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid structural configuration (stride/extent arithmetic, stage lists, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Data fails a declared precondition (unnormalized targets, non-one-hot rows, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Out-of-range indices or inconsistent records in datasets and code tables.
class DataError : public Error {
 public:
  using Error::Error;
};

// Iterative numerical routine failed to converge.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Factorization failure that survived ridge escalation.
class SingularError : public Error {
 public:
  using Error::Error;
};

// API misuse (non-scalar backward root, empty query set, mismatched code widths).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed or version-incompatible file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace finehash
