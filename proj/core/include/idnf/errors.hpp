#pragma once

#include <stdexcept>
#include <string>

namespace idnf {

// Shape or argument mismatch detected while recording an op.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Input outside an op's numeric domain (log of non-positive, divide by zero, ...).
class DomainError : public std::runtime_error {
 public:
  explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

// A mathematical guarantee of the model was violated at runtime. This is
// always a bug upstream (e.g. det(I + J_g) <= 0 means a weight escaped its
// spectral bound), never a condition to recover from.
class ContractViolation : public std::runtime_error {
 public:
  explicit ContractViolation(const std::string& what) : std::runtime_error(what) {}
};

// Iterative solve (fixed-point inversion) did not reach tolerance.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what), last_residual(residual) {}
  double last_residual;
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace idnf
