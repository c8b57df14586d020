#include "cig/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

namespace cig {

EllipticalState EllipticalState::fresh(Index embed_dim, double lambda) {
  if (embed_dim < 1) throw ValidationError("elliptical embedding dim must be positive");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw ValidationError("elliptical lambda must be positive, got " + std::to_string(lambda));
  }
  EllipticalState s;
  s.lambda = lambda;
  s.inv_cov = MatrixXd::Identity(embed_dim, embed_dim) / lambda;
  return s;
}

void EllipticalState::reset() { inv_cov = MatrixXd::Identity(dim(), dim()) / lambda; }

std::pair<double, EllipticalState> e3b_reward(const EllipticalState& state,
                                              const VectorXd& embedding) {
  if (embedding.size() != state.dim()) {
    throw ValidationError("embedding has dim " + std::to_string(embedding.size()) +
                          ", elliptical state expects " + std::to_string(state.dim()));
  }
  if (!embedding.allFinite()) throw ValidationError("embedding has non-finite entries");
  const double norm = embedding.norm();
  if (norm == 0.0) return {0.0, state};
  const VectorXd phi = embedding / norm;
  const VectorXd u = state.inv_cov * phi;
  const double bonus = phi.dot(u);
  EllipticalState next = state;
  next.inv_cov.noalias() -= (u * u.transpose()) / (1.0 + bonus);
  next.inv_cov = 0.5 * (next.inv_cov + next.inv_cov.transpose()).eval();
  return {bonus, next};
}

VectorXd e3b_rollout_rewards(const MatrixXd& embeddings, double lambda) {
  auto state = EllipticalState::fresh(embeddings.cols(), lambda);
  VectorXd r(embeddings.rows());
  for (Index t = 0; t < embeddings.rows(); ++t) {
    auto [bonus, next] = e3b_reward(state, embeddings.row(t).transpose());
    r(t) = bonus;
    state = std::move(next);
  }
  return r;
}

double e3b_x_p2e_reward(double e3b, double p2e) {
  if (!std::isfinite(e3b) || !std::isfinite(p2e) || e3b < 0.0 || p2e < 0.0) {
    throw ValidationError("e3b x p2e inputs must be finite and non-negative");
  }
  return e3b * p2e;
}

VectorXd apt_reward(const MatrixXd& embeddings, Index k) {
  const Index b = embeddings.rows();
  if (k < 1) throw ValidationError("apt k must be >= 1");
  if (b <= k) {
    throw ValidationError("apt needs more than k points: B = " + std::to_string(b) +
                          ", k = " + std::to_string(k));
  }
  if (!embeddings.allFinite()) throw ValidationError("apt embeddings have non-finite entries");
  VectorXd r(b);
  std::vector<double> dist(static_cast<std::size_t>(b - 1));
  for (Index i = 0; i < b; ++i) {
    std::size_t n = 0;
    for (Index j = 0; j < b; ++j) {
      if (j != i) dist[n++] = (embeddings.row(i) - embeddings.row(j)).norm();
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    double sum = 0.0;
    for (Index j = 0; j < k; ++j) sum += dist[static_cast<std::size_t>(j)];
    r(i) = std::log1p(sum / double(k));
  }
  return r;
}

void AdamState::step(VectorXd& params, const VectorXd& grad, double lr, double beta1,
                     double beta2, double epsilon) {
  if (m1.size() != params.size()) {
    m1 = VectorXd::Zero(params.size());
    m2 = VectorXd::Zero(params.size());
    steps = 0;
  }
  ++steps;
  m1 = beta1 * m1 + (1.0 - beta1) * grad;
  m2 = beta2 * m2 + (1.0 - beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1, double(steps));
  const double c2 = 1.0 - std::pow(beta2, double(steps));
  params.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + epsilon);
}

RndLike::RndLike(Index input_dim, Index hidden, Index output_dim, std::uint64_t seed)
    : target_(input_dim, hidden, output_dim, false, mix_seed(seed)),
      predictor_(input_dim, hidden, output_dim, false, mix_seed(seed + 1)) {}

VectorXd RndLike::rewards(const MatrixXd& features) const {
  const MatrixXd x = features.transpose();
  return (predictor_.forward(x) - target_.forward(x)).colwise().squaredNorm().transpose();
}

double RndLike::reward(const VectorXd& features) const {
  return rewards(features.transpose())(0);
}

double RndLike::train(const MatrixXd& features, double lr) {
  if (features.rows() < 1) throw ValidationError("rnd training batch is empty");
  const MatrixXd x = features.transpose();
  VectorXd grad;
  const double loss = predictor_.loss_and_gradient(x, target_.forward(x), grad);
  adam_.step(predictor_.parameters(), grad, lr);
  return loss;
}

std::uint64_t RndLike::target_hash() const {
  // FNV-1a over the raw parameter bytes.
  std::uint64_t h = 1469598103934665603ULL;
  const auto& p = target_.parameters();
  const auto* bytes = reinterpret_cast<const unsigned char*>(p.data());
  for (std::size_t i = 0; i < std::size_t(p.size()) * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

NoveltyHead::NoveltyHead(Index input_dim, Index hidden, std::uint64_t seed)
    : net_(input_dim, hidden, 1, false, mix_seed(seed)) {}

VectorXd NoveltyHead::predict(const MatrixXd& inputs) const {
  return net_.forward(inputs).row(0).transpose();
}

double NoveltyHead::train(const MatrixXd& inputs, const VectorXd& targets, double lr) {
  if (targets.size() != inputs.cols()) {
    throw ValidationError("novelty head: " + std::to_string(targets.size()) + " targets for " +
                          std::to_string(inputs.cols()) + " inputs");
  }
  VectorXd grad;
  const double loss = net_.loss_and_gradient(inputs, targets.transpose(), grad);
  adam_.step(net_.parameters(), grad, lr);
  return loss;
}

}  // namespace cig
