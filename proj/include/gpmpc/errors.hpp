#pragma once

#include <stdexcept>
#include <string>

namespace gpmpc {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class DimensionUnsupported : public Error {
 public:
  using Error::Error;
};

/// A Cholesky pivot fell at or below the floor. Callers may retry with jitter.
class NotPositiveDefinite : public Error {
 public:
  using Error::Error;
};

class ConvergenceFailure : public Error {
 public:
  using Error::Error;
};

class EmptySample : public Error {
 public:
  using Error::Error;
};

/// Bordered-inverse update with a non-positive Schur complement, typically a
/// repeated noiseless input.
class SingularUpdate : public Error {
 public:
  using Error::Error;
};

class AllRestartsFailed : public Error {
 public:
  using Error::Error;
};

class NonFinite : public Error {
 public:
  using Error::Error;
};

class SolverDiverged : public Error {
 public:
  using Error::Error;
};

/// Raised when a feedback policy cannot produce a control. Carries the time
/// index at which it failed.
class PolicyFailure : public Error {
 public:
  PolicyFailure(int time_index, const std::string& what)
      : Error("policy failure at t=" + std::to_string(time_index) + ": " + what),
        time_index_(time_index) {}
  int time_index() const noexcept { return time_index_; }

 private:
  int time_index_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace gpmpc
