#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ear {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A kernel produced NaN or Inf from finite inputs.
class NumericError : public Error {
 public:
  using Error::Error;
};

class GraphError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable record/dataset. Names the offending record where known.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Container bytes do not parse. `offset` is the byte position where parsing failed.
class FormatError : public DataError {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : DataError(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Header and payload disagree, or the payload violates a record invariant.
class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

/// Training touched a record that belongs to a held-out subject.
class LeakageError : public DataError {
 public:
  using DataError::DataError;
};

class EmptyMaskError : public Error {
 public:
  using Error::Error;
};

class EmptyCurveError : public Error {
 public:
  using Error::Error;
};

}  // namespace ear
