#pragma once

#include <stdexcept>
#include <string>

namespace pan {

// Error taxonomy mapped to process exit codes by the CLI:
//   UsageError/ConfigError -> 1, DataError -> 2, NumericError -> 3.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
  virtual int exit_code() const { return 1; }
};

// Bad command-line usage or misuse of a library contract.
struct UsageError : Error {
  using Error::Error;
  int exit_code() const override { return 1; }
};

// Structurally invalid model/layer configuration (shape mismatch, bad extent).
struct ConfigError : Error {
  using Error::Error;
  int exit_code() const override { return 1; }
};

// Malformed input data: file formats, archives, config files, I/O failures.
struct DataError : Error {
  using Error::Error;
  int exit_code() const override { return 2; }
};

// Numeric contract violation: NaN loss, broken normalization preconditions.
struct NumericError : Error {
  using Error::Error;
  int exit_code() const override { return 3; }
};

}  // namespace pan
