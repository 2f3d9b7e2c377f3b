#pragma once

#include <stdexcept>
#include <string>

namespace condmeas {

/// Input that violates a type invariant (bad matrix, malformed scenario field).
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// A numerical guard tripped: vanishing post-selection, grid wraparound,
/// truncated wavefunction, cross-path tolerance exceeded.
class NumericalGuardError : public std::runtime_error {
 public:
  explicit NumericalGuardError(const std::string& what) : std::runtime_error(what) {}
};

/// A scalar function was evaluated outside its domain (superoperator calculus).
class DomainError : public std::domain_error {
 public:
  explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

}  // namespace condmeas
