#pragma once

// Comparison intrinsic rewards. Each produces one value per imagined step so
// the planner can swap them for the CIG reward by name.

#include "cig/common.hpp"
#include "cig/ensemble.hpp"
#include "cig/kernel.hpp"

#include <cstdint>
#include <utility>

namespace cig {

// Mean per-dimension ensemble variance: K_tt / d under the 1/M convention.
template <typename Scalar>
Vector<Scalar> p2e_rewards(const DeviationTensor<Scalar>& dev) {
  const Index t_len = dev.horizon();
  Vector<Scalar> r = Vector<Scalar>::Zero(t_len);
  for (Index k = 0; k < dev.members(); ++k) r += dev.member(k).rowwise().squaredNorm();
  r /= Scalar(dev.members()) * Scalar(dev.dim());
  return r;
}

struct EllipticalState {
  MatrixXd inv_cov;
  double lambda = 0.1;

  static EllipticalState fresh(Index embed_dim, double lambda = 0.1);
  Index dim() const { return inv_cov.rows(); }
  void reset();
};

// Bonus phi^T C^-1 phi for the L2-normalized embedding, followed by the
// Sherman-Morrison update of C^-1. A zero embedding earns nothing and leaves
// the state unchanged.
std::pair<double, EllipticalState> e3b_reward(const EllipticalState& state,
                                              const VectorXd& embedding);

// Rollout form: rows of `embeddings` are consumed in order from a fresh state.
VectorXd e3b_rollout_rewards(const MatrixXd& embeddings, double lambda);

double e3b_x_p2e_reward(double e3b, double p2e);

// log(1 + mean distance to the k nearest other rows), per row.
VectorXd apt_reward(const MatrixXd& embeddings, Index k = 12);

struct AdamState {
  VectorXd m1;
  VectorXd m2;
  std::uint64_t steps = 0;

  void step(VectorXd& params, const VectorXd& grad, double lr, double beta1 = 0.9,
            double beta2 = 0.999, double epsilon = 1e-8);
};

// Random-feature distillation: a frozen random target network and a trained
// predictor over raw feature vectors.
class RndLike {
 public:
  RndLike(Index input_dim, Index hidden, Index output_dim, std::uint64_t seed);

  // Squared prediction error per row of `features`.
  VectorXd rewards(const MatrixXd& features) const;
  double reward(const VectorXd& features) const;

  // One Adam step on the predictor; returns the loss before the step.
  double train(const MatrixXd& features, double lr);

  const Mlp& target() const { return target_; }
  const Mlp& predictor() const { return predictor_; }
  std::uint64_t target_hash() const;

 private:
  Mlp target_;
  Mlp predictor_;
  AdamState adam_;
};

// Regresses the novelty of the real next state onto (s, a), so state-novelty
// rewards can score imagined transitions. Imagined states follow the ensemble
// mean and carry no sampled noise; the head supplies the expected novelty of
// the observation the transition would actually produce.
class NoveltyHead {
 public:
  NoveltyHead(Index input_dim, Index hidden, std::uint64_t seed);

  // inputs: in x B; returns B predictions.
  VectorXd predict(const MatrixXd& inputs) const;
  double train(const MatrixXd& inputs, const VectorXd& targets, double lr);

 private:
  Mlp net_;
  AdamState adam_;
};

}  // namespace cig
