#pragma once

#include <cmath>

namespace idnf {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// Overflow-safe softplus: ln(1 + e^x) = max(x, 0) + log1p(e^-|x|).
inline double softplus(double x) {
  return std::fmax(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

// Raw value r such that softplus(r) = y, y > 0. Used to initialize
// constrained parameters at an exact target value.
inline double softplus_inverse(double y) {
  // ln(e^y - 1), rewritten to stay stable for large y.
  return y + std::log(-std::expm1(-y));
}

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kLn2Pi = 1.8378770664093454836;  // ln(2*pi)

}  // namespace idnf
