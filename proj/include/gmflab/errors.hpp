#pragma once

#include <stdexcept>
#include <string>

#include <fmt/format.h>

namespace gmflab {

/// Operand shapes are incompatible with the requested operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller broke an operation precondition (non-scalar loss, bad label, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid configuration value. `key()` names the offending setting when known.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& message, std::string key = {})
      : std::invalid_argument(message), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// An iterative solver stopped without meeting its tolerance.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& message, double residual)
      : std::runtime_error(fmt::format("{} (residual {:.6g})", message, residual)),
        residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Argument outside the mathematical domain (log of zero concentration, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Malformed serialized data.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gmflab
