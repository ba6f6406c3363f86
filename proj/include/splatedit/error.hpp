// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <stdexcept>
#include <string>

namespace splatedit {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A caller-supplied value violates an operation's precondition.
class InvalidParameterError : public Error {
  public:
    using Error::Error;
};

/// A file does not follow the expected layout (missing property, bad header).
class FormatError : public Error {
  public:
    using Error::Error;
};

/// Data parsed correctly but violates a domain invariant (e.g. NaN field).
class ValidationError : public Error {
  public:
    using Error::Error;
};

class IoError : public Error {
  public:
    using Error::Error;
};

/// Input is well-formed but carries no usable signal (empty mask, all views masked).
class DegenerateInputError : public Error {
  public:
    using Error::Error;
};

/// A diffusion prior could not answer a query (remote failure, timeout, bad reply).
class GuidanceUnavailableError : public Error {
  public:
    using Error::Error;
};

/// An optimization stage produced a non-finite loss.
class DivergenceError : public Error {
  public:
    DivergenceError(const std::string &what, int iteration)
        : Error(what), iteration_(iteration) {}

    int iteration() const noexcept { return iteration_; }

  private:
    int iteration_;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

} // namespace splatedit
