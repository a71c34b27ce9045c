// Copyright (c) 2026 The obsprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace obsprune {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input: shapes, indices, file contents, configuration.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A numerical precondition failed (matrix not SPD, zero pivot, singular
// Hessian). The CLI maps this family to exit code 2.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class NotSpdError : public NumericalError {
 public:
  NotSpdError() : NumericalError("not SPD") {}
  explicit NotSpdError(const std::string& what) : NumericalError("not SPD: " + what) {}
};

class ZeroPivotError : public NumericalError {
 public:
  explicit ZeroPivotError(const std::string& what) : NumericalError("zero pivot: " + what) {}
};

class TensorFileError : public Error {
 public:
  using Error::Error;
};

}  // namespace obsprune
