#pragma once

#include <stdexcept>
#include <string>

namespace space {

// Bad configuration, missing files or directories, malformed arguments.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated precondition on an operation's inputs (shape mismatch, empty input).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// A single dataset item could not be read or decoded.
struct ItemError : std::runtime_error {
  explicit ItemError(const std::string& path, const std::string& why)
      : std::runtime_error("cannot read '" + path + "': " + why), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// Non-finite values during training.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace space
