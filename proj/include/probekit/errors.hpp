#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace probekit {

// Tensor shapes that do not line up for the requested operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf produced or consumed by a numeric routine.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid hyperparameters, specs, or incompatible model/bank pairings.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or unreadable embedding bank. Carries the offending file and,
// where meaningful, the byte offset inside it.
class BankError : public std::runtime_error {
 public:
  BankError(std::string file, std::optional<std::uint64_t> offset,
            const std::string& what)
      : std::runtime_error(format(file, offset, what)),
        file_(std::move(file)),
        offset_(offset) {}

  const std::string& file() const noexcept { return file_; }
  std::optional<std::uint64_t> offset() const noexcept { return offset_; }

 private:
  static std::string format(const std::string& file,
                            std::optional<std::uint64_t> offset,
                            const std::string& what) {
    std::string msg = file;
    if (offset) msg += " @ byte " + std::to_string(*offset);
    return msg + ": " + what;
  }

  std::string file_;
  std::optional<std::uint64_t> offset_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace probekit
