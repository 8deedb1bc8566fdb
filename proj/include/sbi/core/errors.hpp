#pragma once

#include <stdexcept>
#include <string>

namespace sbi {

/// Violated precondition: wrong shapes, mismatched names, empty inputs.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid user-supplied configuration (distribution parameters, CLI configs).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values produced during a numerical procedure.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A bounded retry/try loop ran out of budget.
class BudgetExhausted : public std::runtime_error {
 public:
  BudgetExhausted(const std::string& what, double rate)
      : std::runtime_error(what), rate_(rate) {}
  [[nodiscard]] double rate() const noexcept { return rate_; }

 private:
  double rate_;
};

}  // namespace sbi
