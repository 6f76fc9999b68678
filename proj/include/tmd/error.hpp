// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace tmd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (bad container, manifest mismatch, bad config).
class DataError : public Error {
 public:
  using Error::Error;
};

/// File-system failures: missing files, unreadable or unwritable paths.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Numerical failures such as a covariance that stays indefinite at the ridge cap.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace tmd
