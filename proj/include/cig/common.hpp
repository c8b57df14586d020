#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cig {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

// Input or configuration rejected before any computation ran (exit code 1).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Computation failed on valid-looking input (exit code 2).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Cholesky hit a non-positive pivot. `pivot` is the zero-based step index.
class CholeskyError : public NumericalError {
 public:
  CholeskyError(Index pivot, double value)
      : NumericalError("matrix is not positive definite: pivot " +
                       std::to_string(pivot) + " has value " +
                       std::to_string(value)),
        pivot_(pivot),
        value_(value) {}

  Index pivot() const noexcept { return pivot_; }
  double value() const noexcept { return value_; }

 private:
  Index pivot_;
  double value_;
};

}  // namespace cig
