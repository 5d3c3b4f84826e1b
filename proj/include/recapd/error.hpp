#pragma once

#include <stdexcept>
#include <string>

namespace recapd {

/// Base class for every error raised by the library. The kind drives the
/// CLI exit code, so new throw sites should pick the narrowest subclass.
class Error : public std::runtime_error {
 public:
  enum class Kind { kDimension, kValue, kIo, kConfig, kNumeric };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(Kind::kDimension, what) {}
};

class ValueError : public Error {
 public:
  explicit ValueError(const std::string& what) : Error(Kind::kValue, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(Kind::kIo, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(Kind::kConfig, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(Kind::kNumeric, what) {}
};

}  // namespace recapd
