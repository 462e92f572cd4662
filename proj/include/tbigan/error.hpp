// SPDX-License-Identifier: Apache-2.0
//
// Exception hierarchy. Each category maps onto one CLI exit code.

#pragma once

#include <stdexcept>
#include <string>

namespace tbigan {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// Invalid flag, config field, or API argument (exit code 2).
class UsageError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// A caller violated a documented precondition (shape, range, alignment).
class ContractError : public UsageError {
 public:
  using UsageError::UsageError;
};

/// Missing, corrupt, or inconsistent input data (exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// Checkpoint version mismatch or integrity failure.
class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};

/// A loss or parameter became non-finite during training (exit code 4).
class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

}  // namespace tbigan
