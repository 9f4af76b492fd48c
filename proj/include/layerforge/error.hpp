#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace layerforge {

// Exit codes are a stable CLI contract.
enum class ExitCode : int { ok = 0, data = 1, format = 2, usage = 3 };

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::data; }
};

/// Inputs are well-formed but violate a data invariant (missing outcome,
/// duplicate user, non-finite value, degenerate statistics input).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Bytes on disk do not match the interchange format.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  ExitCode exit_code() const noexcept override { return ExitCode::format; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class UsageError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::usage; }
};

}  // namespace layerforge
