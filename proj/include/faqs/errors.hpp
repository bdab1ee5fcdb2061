#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace faqs {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not line up. The message names the offending axis.
class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class DeserializeError : public ProtocolError {
 public:
  DeserializeError(const std::string& what, std::size_t offset)
      : ProtocolError(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Non-finite loss or gradient during local training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace faqs
