#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace eventbind {

/// Invalid configuration or arguments; detected before any compute.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed input data (event files, frame files, checkpoints).
class DataError : public std::runtime_error {
 public:
  enum class Code : std::uint8_t {
    kBadMagic = 1,
    kBadVersion,
    kTruncated,
    kNonMonotonicTime,
    kOutOfBounds,
    kBadPolarity,
    kBadHeader,
    kIo,
  };

  DataError(Code code, std::uint64_t offset, const std::string& what)
      : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"), code_(code), offset_(offset) {}

  DataError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}

  [[nodiscard]] Code code() const noexcept { return code_; }
  [[nodiscard]] std::uint64_t offset() const noexcept { return offset_; }

 private:
  Code code_;
  std::uint64_t offset_ = 0;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace eventbind
