#pragma once

#include <stdexcept>
#include <string>

namespace dwgp {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Caller misuse: mismatched grids, bad step sizes, missing inputs.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A potential failed one or more double-well checks.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Eigensolver did not converge.
class SolverError : public Error {
 public:
  using Error::Error;
};

/// The physical model assumptions do not hold (e.g. doublet not separated).
class ModelError : public Error {
 public:
  using Error::Error;
};

/// Time integration failed; carries the time at which it was detected.
class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& what, double time)
      : Error(what), time_(time) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

/// The closed-form imbalance was requested at k^2 = 1.
class SeparatrixError : public Error {
 public:
  using Error::Error;
};

/// Derived parameters are mutually inconsistent.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

}  // namespace dwgp
