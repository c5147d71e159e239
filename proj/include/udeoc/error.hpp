#pragma once

#include <stdexcept>
#include <string>

namespace udeoc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

/// A forward solve produced a non-finite state.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, double time) : Error(what), time_(time) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

/// Adaptive step size collapsed below the allowed minimum.
class StiffnessError : public Error {
 public:
  StiffnessError(const std::string& what, double time, double step)
      : Error(what), time_(time), step_(step) {}
  double time() const noexcept { return time_; }
  double step() const noexcept { return step_; }

 private:
  double time_;
  double step_;
};

/// A backward-in-time adjoint solve blew up.
class InstabilityError : public Error {
 public:
  InstabilityError(const std::string& what, double time, double max_abs_lambda, int iteration = -1)
      : Error(what), time_(time), max_abs_lambda_(max_abs_lambda), iteration_(iteration) {}
  double time() const noexcept { return time_; }
  double max_abs_lambda() const noexcept { return max_abs_lambda_; }
  /// Sweep iteration at which the blow-up happened, -1 outside a sweep.
  int iteration() const noexcept { return iteration_; }

 private:
  double time_;
  double max_abs_lambda_;
  int iteration_;
};

}  // namespace udeoc
