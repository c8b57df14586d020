#pragma once

// Shared generators and brute-force oracles for the test suites. Nothing in
// here calls into the reward path it is used to check.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

namespace cig::testing {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline Mat random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                         double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Member predictions: M matrices of shape T x d.
inline std::vector<Mat> random_predictions(std::mt19937_64& rng, int M, int T, int d,
                                           double scale = 1.0) {
  std::vector<Mat> out;
  for (int k = 0; k < M; ++k) out.push_back(random_matrix(rng, T, d, scale));
  return out;
}

// Random PSD matrix F F^T with a random rank in [1, T].
inline Mat random_psd(std::mt19937_64& rng, Eigen::Index T, double scale = 1.0) {
  std::uniform_int_distribution<Eigen::Index> rank_dist(1, T);
  const Mat f = random_matrix(rng, T, rank_dist(rng), scale);
  Mat k = f * f.transpose();
  return (k + k.transpose()) / 2.0;
}

// log det via eigenvalues of a symmetric positive definite matrix.
inline double logdet_eigen(const Mat& a) {
  Eigen::SelfAdjointEigenSolver<Mat> es(a, Eigen::EigenvaluesOnly);
  return es.eigenvalues().array().log().sum();
}

// log |det| via partial-pivot LU.
inline double logdet_lu(const Mat& a) {
  Eigen::PartialPivLU<Mat> lu(a);
  const Mat& u = lu.matrixLU();
  double s = 0.0;
  for (Eigen::Index i = 0; i < u.rows(); ++i) s += std::log(std::abs(u(i, i)));
  return s;
}

// Schur complement of entry t given the leading t x t block, by direct solve.
inline double schur_by_solve(const Mat& a, Eigen::Index t) {
  if (t == 0) return a(0, 0);
  const Mat prefix = a.topLeftCorner(t, t);
  const Vec k = a.col(t).head(t);
  return a(t, t) - k.dot(prefix.ldlt().solve(k));
}

}  // namespace cig::testing
