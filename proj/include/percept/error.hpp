#pragma once

#include <stdexcept>
#include <string>

namespace percept {

/// Raised for malformed or inconsistent input data (files, datasets, models).
/// Precondition violations on arguments use std::invalid_argument instead.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class FseqErrc {
  io,
  bad_magic,
  unsupported_version,
  unsupported_dtype,
  truncated,
  non_finite,
};

const char* to_string(FseqErrc code);

class FseqError : public DataError {
public:
  FseqError(FseqErrc code, const std::string& what)
      : DataError(std::string(to_string(code)) + ": " + what), code_(code) {}

  FseqErrc code() const noexcept { return code_; }

private:
  FseqErrc code_;
};

}  // namespace percept
