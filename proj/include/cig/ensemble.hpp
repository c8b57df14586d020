#pragma once

// M one-step predictors mu_k(s, a) of identical architecture that differ only
// in their initialization seed. Each member is a two-hidden-layer tanh
// perceptron; with `residual` the state is added to the network output so a
// zero output layer is the identity map.

#include "cig/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace cig {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Samples are rows, as they come out of the replay buffer.
struct TransitionBatch {
  MatrixXd states;       // B x d_s
  MatrixXd actions;      // B x d_a
  MatrixXd next_states;  // B x d

  Index size() const { return states.rows(); }
  void validate() const;
};

// One member. Parameters live in a single flat vector laid out as
// W1 (h x in), b1 (h), W2 (h x h), b2 (h), W3 (out x h), b3 (out), each
// matrix column-major.
class Mlp {
 public:
  Mlp() = default;
  Mlp(Index input_dim, Index hidden, Index output_dim, bool residual, std::uint64_t seed);

  Index input_dim() const { return input_dim_; }
  Index hidden() const { return hidden_; }
  Index output_dim() const { return output_dim_; }
  bool residual() const { return residual_; }
  Index parameter_count() const { return params_.size(); }

  const VectorXd& parameters() const { return params_; }
  VectorXd& parameters() { return params_; }

  // inputs: in x B (one sample per column). Returns out x B.
  MatrixXd forward(const MatrixXd& inputs) const;

  // Mean squared error over the batch and output dims; writes d loss / d params.
  double loss_and_gradient(const MatrixXd& inputs, const MatrixXd& targets,
                           VectorXd& gradient) const;
  double loss(const MatrixXd& inputs, const MatrixXd& targets) const;

 private:
  using ConstMap = Eigen::Map<const MatrixXd>;
  using Map = Eigen::Map<MatrixXd>;

  ConstMap w1() const { return {params_.data(), hidden_, input_dim_}; }
  ConstMap b1() const { return {params_.data() + hidden_ * input_dim_, hidden_, 1}; }
  ConstMap w2() const { return {params_.data() + off_w2_, hidden_, hidden_}; }
  ConstMap b2() const { return {params_.data() + off_w2_ + hidden_ * hidden_, hidden_, 1}; }
  ConstMap w3() const { return {params_.data() + off_w3_, output_dim_, hidden_}; }
  ConstMap b3() const { return {params_.data() + off_w3_ + output_dim_ * hidden_, output_dim_, 1}; }

  Index input_dim_ = 0;
  Index hidden_ = 0;
  Index output_dim_ = 0;
  bool residual_ = false;
  Index off_w2_ = 0;
  Index off_w3_ = 0;
  VectorXd params_;
};

enum class Optimizer { kSgdMomentum, kAdam };

struct EnsembleConfig {
  Index members = 5;
  Index state_dim = 0;
  Index action_dim = 0;
  // Defaults to state_dim when left at 0.
  Index output_dim = 0;
  Index hidden = 64;
  bool residual = true;
  Optimizer optimizer = Optimizer::kSgdMomentum;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-5;
  std::uint64_t seed = 0;
};

class EnsembleModel {
 public:
  explicit EnsembleModel(EnsembleConfig config);

  Index members() const { return static_cast<Index>(members_.size()); }
  Index state_dim() const { return config_.state_dim; }
  Index action_dim() const { return config_.action_dim; }
  Index input_dim() const { return config_.state_dim + config_.action_dim; }
  Index output_dim() const { return config_.output_dim; }
  const EnsembleConfig& config() const { return config_; }
  const std::vector<std::uint64_t>& seeds() const { return seeds_; }
  std::uint64_t step_count() const { return step_count_; }

  const Mlp& member(Index k) const { return members_[static_cast<std::size_t>(k)]; }
  Mlp& member(Index k) { return members_[static_cast<std::size_t>(k)]; }

  // states: T x d_s, actions: T x d_a. Returns M matrices of shape T x d;
  // entry [k](t, :) = mu_k(s_t, a_t).
  std::vector<MatrixXd> predict_all(const MatrixXd& states, const MatrixXd& actions) const;

  // Column-batched variant: inputs is (d_s + d_a) x B; out[k] is d x B.
  void predict_columns(const MatrixXd& inputs, std::vector<MatrixXd>& out) const;

  // Ensemble mean for row-major samples; B x d.
  MatrixXd predict_mean(const MatrixXd& states, const MatrixXd& actions) const;

  // One optimizer step per member on its own MSE over the shared batch.
  // Returns the per-member losses before the step.
  std::vector<double> train_step(const TransitionBatch& batch, double lr);

  // ||s' - mean prediction||^2 / d for each transition.
  std::vector<double> mean_residuals(const TransitionBatch& batch) const;

  // First line: JSON header; then parameters as raw little-endian float64.
  void save(std::ostream& os) const;
  static EnsembleModel load(std::istream& is);

 private:
  MatrixXd stack_inputs(const MatrixXd& states, const MatrixXd& actions) const;

  EnsembleConfig config_;
  std::vector<std::uint64_t> seeds_;
  std::vector<Mlp> members_;
  std::vector<VectorXd> moment1_;
  std::vector<VectorXd> moment2_;
  std::uint64_t step_count_ = 0;
};

// SplitMix64 step, used to derive independent seeds from one base seed.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace cig
