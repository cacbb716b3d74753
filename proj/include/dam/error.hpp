// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dam {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced by a forward op, or a non-finite gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the autodiff graph (non-scalar loss, double backward).
class GraphError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration key/value or mismatched configuration on load.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file, or I/O failure.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace dam
