#pragma once

#include <stdexcept>
#include <string>

namespace debias {

/// Bad configuration or arguments. Raised before any sampling happens.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An oracle evaluation failed inside one replication (solver non-convergence,
/// non-finite functional value, regeneration cycle over its cap, ...).
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// EvaluationError annotated with the level being evaluated.
class ReplicationError : public std::runtime_error {
 public:
  ReplicationError(int level, const std::string& what)
      : std::runtime_error("level " + std::to_string(level) + ": " + what), level_(level) {}
  int level() const { return level_; }

 private:
  int level_;
};

/// More replications failed than the configured budget allows.
class FailureBudgetExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Level differences are identically zero; the decay rate is undefined.
class DegenerateFunctional : public std::runtime_error {
 public:
  DegenerateFunctional() : std::runtime_error("linear functional, any r > 1/2 valid") {}
};

}  // namespace debias
