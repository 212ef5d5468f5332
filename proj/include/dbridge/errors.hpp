#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dbridge {

/// Process exit codes used by the command line front end.
enum class ExitCode : int {
  ok = 0,
  usage = 2,
  numeric = 3,
  budget = 4,
  io = 5,
};

class Error : public std::runtime_error {
 public:
  Error(const std::string& what, ExitCode code) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Bad arguments: mismatched grids, empty inputs, malformed config.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(what, ExitCode::usage) {}
};

/// Argument outside the state interval or outside the range of a transform.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(what, ExitCode::usage) {}
};

/// Quadrature or root finding failed, or a model violates its assumptions.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what, ExitCode::numeric) {}
};

/// Model cannot be used, e.g. its speed measure is not finite.
class ModelError : public Error {
 public:
  explicit ModelError(const std::string& what) : Error(what, ExitCode::numeric) {}
};

/// A matrix that has to be invertible or positive definite is not.
class ConditioningError : public Error {
 public:
  explicit ConditioningError(const std::string& what) : Error(what, ExitCode::numeric) {}
};

/// A discretized path left the state interval.
class BoundaryViolation : public Error {
 public:
  BoundaryViolation(std::size_t step, double value)
      : Error("path left the state interval at step " + std::to_string(step) + " (value " +
                  std::to_string(value) + ")",
              ExitCode::numeric),
        step_(step),
        value_(value) {}
  std::size_t step() const noexcept { return step_; }
  double value() const noexcept { return value_; }

 private:
  std::size_t step_;
  double value_;
};

/// The rejection sampler ran out of attempts.
class RejectionBudgetError : public Error {
 public:
  RejectionBudgetError(std::size_t attempts, std::size_t boundary_aborts)
      : Error("rejection budget exhausted after " + std::to_string(attempts) + " attempts (" +
                  std::to_string(boundary_aborts) + " boundary aborts)",
              ExitCode::budget),
        attempts_(attempts),
        boundary_aborts_(boundary_aborts) {}
  std::size_t attempts() const noexcept { return attempts_; }
  std::size_t boundary_aborts() const noexcept { return boundary_aborts_; }

 private:
  std::size_t attempts_;
  std::size_t boundary_aborts_;
};

/// No independent diffusion hit the path within the cap; the hit probability is
/// numerically zero.
class HittingBudgetError : public Error {
 public:
  explicit HittingBudgetError(std::size_t cap)
      : Error("no hitting path within cap of " + std::to_string(cap) + " draws", ExitCode::budget),
        cap_(cap) {}
  std::size_t cap() const noexcept { return cap_; }

 private:
  std::size_t cap_;
};

class ChainInitError : public Error {
 public:
  explicit ChainInitError(const std::string& what) : Error(what, ExitCode::budget) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what, ExitCode::io) {}
};

}  // namespace dbridge
