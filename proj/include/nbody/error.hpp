#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nbody {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Transport failure: peer failure, deadlock, timeout or misuse of a rank.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated wire data. Carries the byte offset of the failure.
class DecodeError : public Error {
 public:
  DecodeError(const std::string& what, std::size_t offset)
      : Error(what + " at offset " + std::to_string(offset)), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace nbody
