#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rclnet {

/// Base class for every error thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not line up; the message names the offending extents.
struct DimensionError : Error {
  using Error::Error;
};

/// A layer, network, sampler or run configuration is invalid.
struct ConfigError : Error {
  using Error::Error;
};

/// Backward called without a forward cache, or similar API misuse.
struct StateError : Error {
  using Error::Error;
};

/// Malformed file. `offset` is the byte position where parsing failed.
struct FormatError : Error {
  explicit FormatError(const std::string& what, std::uint64_t at = 0)
      : Error(what + " (byte offset " + std::to_string(at) + ")"), offset(at) {}
  std::uint64_t offset;
};

/// Non-finite values where finite ones are required, or statistics that are
/// undefined for the given input (e.g. correlation of a constant vector).
struct NumericError : Error {
  using Error::Error;
};

}  // namespace rclnet
