#pragma once

// Ensemble-disagreement kernels along an imagined rollout.
//
// Member predictions (M members, T steps, d output dims) are centred on the
// ensemble mean. The centred deviations feed two Gram constructions:
//
//   K[j,t] = (1/M) sum_k <delta_k^(j), delta_k^(t)>        (T x T, traced blocks)
//   G[a,b] = (1/M) <d_a, d_b>,  d_k = stacked delta_k      (M x M, full covariance)
//
// K is what the reward decomposes; G is the cheap route to the untraced
// Td x Td covariance C = (1/M) sum_k d_k d_k^T used by the ablation.

#include "cig/common.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <utility>
#include <vector>

namespace cig {

// Largest Td for which the dense Td x Td covariance may be materialized.
inline constexpr Index kMaxMaterializedDim = 4096;

// Centred deviations of each member from the ensemble mean.
// deltas()[k] is a T x d matrix whose row t is delta_k^(t).
template <typename Scalar>
class DeviationTensor {
 public:
  using MatrixType = Matrix<Scalar>;

  DeviationTensor() = default;

  // Wraps deviations that are already centred. Throws ValidationError if the
  // shapes disagree, any entry is non-finite, or sum_k deltas[k] != 0.
  static DeviationTensor from_centered(std::vector<MatrixType> deltas) {
    if (deltas.size() < 2) {
      throw ValidationError("deviation tensor needs at least 2 members, got " +
                            std::to_string(deltas.size()));
    }
    const Index T = deltas.front().rows();
    const Index d = deltas.front().cols();
    MatrixType sum = MatrixType::Zero(T, d);
    Scalar scale = Scalar(0);
    for (std::size_t k = 0; k < deltas.size(); ++k) {
      if (deltas[k].rows() != T || deltas[k].cols() != d) {
        throw ValidationError("member " + std::to_string(k) + " has shape " +
                              std::to_string(deltas[k].rows()) + "x" +
                              std::to_string(deltas[k].cols()) + ", expected " +
                              std::to_string(T) + "x" + std::to_string(d));
      }
      if (!deltas[k].allFinite()) {
        throw ValidationError("member " + std::to_string(k) +
                              " has non-finite deviations");
      }
      sum += deltas[k];
      if (deltas[k].size() > 0) {
        scale = std::max(scale, deltas[k].cwiseAbs().maxCoeff());
      }
    }
    const Scalar tol = Scalar(1e-10) * std::max(Scalar(1), scale);
    if (sum.size() > 0 && sum.cwiseAbs().maxCoeff() > tol) {
      throw ValidationError("deviations are not centred: max |sum_k delta| = " +
                            std::to_string(double(sum.cwiseAbs().maxCoeff())));
    }
    DeviationTensor out;
    out.deltas_ = std::move(deltas);
    return out;
  }

  Index members() const { return static_cast<Index>(deltas_.size()); }
  Index horizon() const { return deltas_.empty() ? 0 : deltas_.front().rows(); }
  Index dim() const { return deltas_.empty() ? 0 : deltas_.front().cols(); }

  const std::vector<MatrixType>& deltas() const { return deltas_; }
  const MatrixType& member(Index k) const { return deltas_[static_cast<std::size_t>(k)]; }

  // delta_k^(t) as a column vector.
  Vector<Scalar> at(Index k, Index t) const { return member(k).row(t).transpose(); }

  // d_k: member k's deviations stacked step-major into a length-Td vector.
  Vector<Scalar> stacked(Index k) const {
    const MatrixType rows = member(k).transpose();
    return rows.reshaped();
  }

 private:
  std::vector<MatrixType> deltas_;
};

// The T x T traced Gram K and its ridged form K + ridge * I.
template <typename Scalar>
class KernelMatrix {
 public:
  using MatrixType = Matrix<Scalar>;

  KernelMatrix() = default;

  // Accepts any symmetric matrix as K (symmetry checked to 1e-12 relative).
  // Positive semidefiniteness is not checked here; see is_positive_semidefinite.
  static KernelMatrix from_gram(MatrixType gram, Scalar ridge) {
    if (gram.rows() != gram.cols()) {
      throw ValidationError("kernel must be square");
    }
    if (!(ridge >= Scalar(0)) || !std::isfinite(double(ridge))) {
      throw ValidationError("ridge must be finite and >= 0, got " +
                            std::to_string(double(ridge)));
    }
    if (!gram.allFinite()) {
      throw ValidationError("kernel has non-finite entries");
    }
    if (gram.size() > 0) {
      const Scalar scale = std::max(Scalar(1), gram.cwiseAbs().maxCoeff());
      if ((gram - gram.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-12) * scale) {
        throw ValidationError("kernel is not symmetric");
      }
    }
    KernelMatrix out;
    out.gram_ = (gram + gram.transpose()) / Scalar(2);
    out.ridge_ = ridge;
    return out;
  }

  Index horizon() const { return gram_.rows(); }
  const MatrixType& gram() const { return gram_; }
  Scalar ridge() const { return ridge_; }

  MatrixType ridged() const {
    MatrixType out = gram_;
    out.diagonal().array() += ridge_;
    return out;
  }

  // Leading t x t principal block, same ridge.
  KernelMatrix leading(Index t) const {
    KernelMatrix out;
    out.gram_ = gram_.topLeftCorner(t, t);
    out.ridge_ = ridge_;
    return out;
  }

 private:
  MatrixType gram_;
  Scalar ridge_ = Scalar(0);
};

// Member Gram of the stacked deviations, the M x M side of the Sylvester
// identity for log det(sigma2 I_Td + C).
template <typename Scalar>
class FullCovariance {
 public:
  using MatrixType = Matrix<Scalar>;

  FullCovariance(MatrixType factor, Scalar sigma2, Index horizon, Index dim)
      : factor_(std::move(factor)), sigma2_(sigma2), horizon_(horizon), dim_(dim) {
    gram_ = factor_.transpose() * factor_;
    gram_ = (gram_ + gram_.transpose()).eval() / Scalar(2);
  }

  // G = D^T D with D = [d_1 | ... | d_M] / sqrt(M).
  const MatrixType& gram() const { return gram_; }
  // D, Td x M.
  const MatrixType& factor() const { return factor_; }
  Scalar sigma2() const { return sigma2_; }
  Index horizon() const { return horizon_; }
  Index dim() const { return dim_; }
  Index stacked_dim() const { return horizon_ * dim_; }
  Index members() const { return factor_.cols(); }

  // Dense C = D D^T. Only for verification and the untraced ablation.
  MatrixType materialize() const {
    if (stacked_dim() > kMaxMaterializedDim) {
      throw ValidationError("Td = " + std::to_string(stacked_dim()) +
                            " exceeds the materialization cap of " +
                            std::to_string(kMaxMaterializedDim));
    }
    MatrixType c = factor_ * factor_.transpose();
    return (c + c.transpose()) / Scalar(2);
  }

 private:
  MatrixType factor_;
  MatrixType gram_;
  Scalar sigma2_;
  Index horizon_;
  Index dim_;
};

// predictions[k] is member k's T x d prediction matrix.
template <typename Scalar>
DeviationTensor<Scalar> compute_deviations(const std::vector<Matrix<Scalar>>& predictions) {
  const std::size_t M = predictions.size();
  if (M < 2) {
    throw ValidationError("ensemble disagreement needs M >= 2 members, got " +
                          std::to_string(M));
  }
  const Index T = predictions.front().rows();
  const Index d = predictions.front().cols();
  for (std::size_t k = 0; k < M; ++k) {
    const auto& p = predictions[k];
    if (p.rows() != T || p.cols() != d) {
      throw ValidationError("member " + std::to_string(k) + " predictions are " +
                            std::to_string(p.rows()) + "x" + std::to_string(p.cols()) +
                            ", expected " + std::to_string(T) + "x" + std::to_string(d));
    }
    for (Index t = 0; t < T; ++t) {
      if (!p.row(t).allFinite()) {
        throw ValidationError("non-finite prediction at member " + std::to_string(k) +
                              ", step " + std::to_string(t));
      }
    }
  }
  Matrix<Scalar> mean = Matrix<Scalar>::Zero(T, d);
  for (const auto& p : predictions) mean += p;
  mean /= Scalar(M);

  std::vector<Matrix<Scalar>> deltas;
  deltas.reserve(M);
  for (const auto& p : predictions) deltas.push_back(p - mean);
  // Subtracting the mean leaves a rounding residue in sum_k delta; remove it
  // from the last member so the centring identity holds to the last ulp.
  Matrix<Scalar> residue = Matrix<Scalar>::Zero(T, d);
  for (const auto& dk : deltas) residue += dk;
  deltas.back() -= residue;
  return DeviationTensor<Scalar>::from_centered(std::move(deltas));
}

// K[j,t] = (1/M) sum_k <delta_k^(j), delta_k^(t)>, symmetrized.
template <typename Scalar>
KernelMatrix<Scalar> build_kernel(const DeviationTensor<Scalar>& dev, Scalar ridge) {
  const Index T = dev.horizon();
  Matrix<Scalar> gram = Matrix<Scalar>::Zero(T, T);
  for (const auto& dk : dev.deltas()) {
    gram.template selfadjointView<Eigen::Lower>().rankUpdate(dk);
  }
  gram.template triangularView<Eigen::StrictlyUpper>() = gram.transpose();
  gram /= Scalar(dev.members());
  return KernelMatrix<Scalar>::from_gram(std::move(gram), ridge);
}

template <typename Scalar>
FullCovariance<Scalar> build_full_covariance_gram(const DeviationTensor<Scalar>& dev,
                                                  Scalar sigma2) {
  if (!(sigma2 > Scalar(0))) {
    throw ValidationError("sigma2 must be > 0 for the full-covariance surrogate, got " +
                          std::to_string(double(sigma2)));
  }
  const Index M = dev.members();
  const Index Td = dev.horizon() * dev.dim();
  Matrix<Scalar> factor(Td, M);
  const Scalar inv_sqrt_m = Scalar(1) / std::sqrt(Scalar(M));
  for (Index k = 0; k < M; ++k) factor.col(k) = dev.stacked(k) * inv_sqrt_m;
  return FullCovariance<Scalar>(std::move(factor), sigma2, dev.horizon(), dev.dim());
}

// Number of eigenvalues above rel_tol * lambda_max of a symmetric matrix.
template <typename Derived>
Index numerical_rank(const Eigen::MatrixBase<Derived>& symmetric, double rel_tol = 1e-9) {
  using Scalar = typename Derived::Scalar;
  if (symmetric.size() == 0) return 0;
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> solver(symmetric, Eigen::EigenvaluesOnly);
  const auto& ev = solver.eigenvalues();
  const Scalar top = ev.cwiseAbs().maxCoeff();
  if (top == Scalar(0)) return 0;
  return (ev.array() > Scalar(rel_tol) * top).count();
}

template <typename Derived>
bool is_positive_semidefinite(const Eigen::MatrixBase<Derived>& symmetric,
                              double rel_tol = 1e-9) {
  using Scalar = typename Derived::Scalar;
  if (symmetric.size() == 0) return true;
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> solver(symmetric, Eigen::EigenvaluesOnly);
  const Scalar norm = symmetric.cwiseAbs().maxCoeff();
  return solver.eigenvalues().minCoeff() >= -Scalar(rel_tol) * std::max(norm, Scalar(1e-300));
}

// Debug dump: row-major CSV, 17 significant digits.
template <typename Derived>
void write_matrix_csv(std::ostream& os, const Eigen::MatrixBase<Derived>& m) {
  std::ostringstream line;
  line << std::setprecision(17);
  for (Index i = 0; i < m.rows(); ++i) {
    line.str("");
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) line << ',';
      line << double(m(i, j));
    }
    os << line.str() << '\n';
  }
}

}  // namespace cig
