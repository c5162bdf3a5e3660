#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mer {

// Precondition violated by the caller (bad shape, bad factor, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operation called in a state that does not support it (missing cache,
// incomplete trace, ...).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed PNG stream. `offset` is the byte position where parsing failed.
class DecodeError : public std::runtime_error {
 public:
  DecodeError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Checkpoint or weight file could not be read, or lacks tensors.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A numeric step produced a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mer
