#pragma once

#include <Eigen/Dense>
#include <initializer_list>
#include <string>
#include <vector>

#include "idnf/errors.hpp"

namespace idnf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Dense rank-<=2 array of doubles, the sole numeric carrier across module
// boundaries. Vectors are (n x 1). Construction rejects NaN/Inf.
class Tensor {
 public:
  Tensor() : m_(0, 0) {}

  explicit Tensor(Matrix m) : m_(std::move(m)) { validate(); }

  Tensor(Eigen::Index rows, Eigen::Index cols, const std::vector<double>& row_major)
      : m_(rows, cols) {
    if (static_cast<Eigen::Index>(row_major.size()) != rows * cols) {
      throw ShapeError("Tensor: data length " + std::to_string(row_major.size()) +
                       " does not match shape (" + std::to_string(rows) + ", " +
                       std::to_string(cols) + ")");
    }
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m_(i, j) = row_major[i * cols + j];
    validate();
  }

  static Tensor vector(std::initializer_list<double> xs) {
    Matrix m(static_cast<Eigen::Index>(xs.size()), 1);
    Eigen::Index i = 0;
    for (double x : xs) m(i++, 0) = x;
    return Tensor(std::move(m));
  }

  static Tensor vector(const std::vector<double>& xs) {
    Matrix m(static_cast<Eigen::Index>(xs.size()), 1);
    for (std::size_t i = 0; i < xs.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = xs[i];
    return Tensor(std::move(m));
  }

  static Tensor scalar(double x) {
    Matrix m(1, 1);
    m(0, 0) = x;
    return Tensor(std::move(m));
  }

  static Tensor zeros(Eigen::Index rows, Eigen::Index cols) {
    return Tensor(Matrix::Zero(rows, cols));
  }

  Eigen::Index rows() const { return m_.rows(); }
  Eigen::Index cols() const { return m_.cols(); }
  Eigen::Index size() const { return m_.size(); }
  bool is_scalar() const { return m_.rows() == 1 && m_.cols() == 1; }

  double operator()(Eigen::Index i, Eigen::Index j = 0) const { return m_(i, j); }
  double value() const {
    if (!is_scalar()) throw ShapeError("Tensor::value: tensor is not scalar");
    return m_(0, 0);
  }

  const Matrix& mat() const { return m_; }

  std::vector<double> row_major() const {
    std::vector<double> out(static_cast<std::size_t>(m_.size()));
    for (Eigen::Index i = 0; i < m_.rows(); ++i)
      for (Eigen::Index j = 0; j < m_.cols(); ++j)
        out[static_cast<std::size_t>(i * m_.cols() + j)] = m_(i, j);
    return out;
  }

 private:
  void validate() const {
    if (!m_.allFinite()) throw DomainError("Tensor: non-finite entry rejected");
  }

  Matrix m_;
};

inline std::string shape_str(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

}  // namespace idnf
