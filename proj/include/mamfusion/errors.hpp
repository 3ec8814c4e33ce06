// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mamfusion {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or feature widths.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters or configuration file content.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data (manifests, corpora, checkpoints).
class DataError : public Error {
 public:
  using Error::Error;
};

// Binary file could not be decoded; carries the offending byte offset.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : DataError(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mamfusion
