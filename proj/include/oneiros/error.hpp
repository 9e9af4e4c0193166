#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace oneiros {

/// Base class for every error raised by the pipeline.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input data, bad config, or a violated precondition. CLI exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A model backend failed (transport, protocol, or schema). CLI exit code 2.
class BackendError : public Error {
 public:
  BackendError(const std::string& what, bool retryable, int attempts = 1)
      : Error(what), retryable_(retryable), attempts_(attempts) {}

  bool retryable() const noexcept { return retryable_; }
  int attempts() const noexcept { return attempts_; }

 private:
  bool retryable_;
  int attempts_;
};

}  // namespace oneiros
