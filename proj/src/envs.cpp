#include "cig/envs.hpp"

#include <cmath>
#include <deque>

namespace cig {

std::string to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::kMultiroom: return "multiroom";
    case EnvKind::kCorridor: return "corridor";
    case EnvKind::kChain: return "chain";
  }
  return "unknown";
}

EnvKind parse_env_kind(const std::string& name) {
  if (name == "multiroom") return EnvKind::kMultiroom;
  if (name == "corridor") return EnvKind::kCorridor;
  if (name == "chain") return EnvKind::kChain;
  throw ValidationError("env kind: unknown value '" + name +
                        "' (expected multiroom, corridor or chain)");
}

void EnvConfig::validate() const {
  if (kind == EnvKind::kMultiroom) {
    if (size < 2) throw ValidationError("env size: multiroom rooms need side >= 2");
    if (rooms < 1) throw ValidationError("env rooms: must be >= 1");
  } else if (size < 2) {
    throw ValidationError("env size: need at least 2 cells");
  }
  if (stay_actions < 0) throw ValidationError("env stay_actions: must be >= 0");
  if (horizon < 0) throw ValidationError("env horizon: must be >= 0");
  if (distractor_dims < 1 && noisy_tv) {
    throw ValidationError("env distractor_dims: must be >= 1 when noisy_tv is on");
  }
}

Index EnvConfig::effective_horizon() const {
  if (horizon > 0) return horizon;
  return kind == EnvKind::kMultiroom ? 100 : 50;
}

CoverageRecord::CoverageRecord(Index total_reachable, Index id_space)
    : seen_(static_cast<std::size_t>(std::max(id_space, total_reachable)), false),
      total_(total_reachable) {
  if (total_reachable < 1) throw ValidationError("coverage: total_reachable must be positive");
}

void CoverageRecord::visit(Index cell) {
  if (cell < 0 || cell >= Index(seen_.size())) {
    throw ValidationError("coverage: identifier " + std::to_string(cell) + " out of range");
  }
  if (!seen_[static_cast<std::size_t>(cell)]) {
    if (count_ == total_) throw ValidationError("coverage: more identifiers than reachable");
    seen_[static_cast<std::size_t>(cell)] = true;
    ++count_;
  }
}

bool CoverageRecord::visited(Index cell) const {
  return cell >= 0 && cell < Index(seen_.size()) && seen_[static_cast<std::size_t>(cell)];
}

double coverage(const CoverageRecord& record) {
  return double(record.visited_count()) / double(record.total_reachable());
}

double episode_entropy(const std::vector<std::uint64_t>& counts) {
  double total = 0.0;
  for (auto c : counts) total += double(c);
  if (total < 1.0) throw ValidationError("episode entropy needs at least one visit");
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = double(c) / total;
    h -= p * std::log(p);
  }
  return h;
}

Environment::Environment(const EnvConfig& config) : config_(config), rng_(config.seed) {
  config_.validate();
  horizon_ = config_.effective_horizon();
  switch (config_.kind) {
    case EnvKind::kMultiroom: {
      const Index s = config_.size;
      grid_w_ = config_.rooms * s + (config_.rooms - 1);
      grid_h_ = s;
      open_.assign(static_cast<std::size_t>(grid_w_ * grid_h_), true);
      for (Index r = 1; r < config_.rooms; ++r) {
        const Index wall_x = r * (s + 1) - 1;
        for (Index y = 0; y < grid_h_; ++y) {
          if (y != s / 2) open_[static_cast<std::size_t>(y * grid_w_ + wall_x)] = false;
        }
      }
      cell_count_ = grid_w_ * grid_h_;
      action_count_ = 5;  // right, left, down, up, drop
      break;
    }
    case EnvKind::kCorridor:
      cell_count_ = config_.size;
      action_count_ = 3 + config_.stay_actions;  // left, right, stays, drop
      break;
    case EnvKind::kChain:
      cell_count_ = config_.size;
      action_count_ = 3;  // left, right, drop
      break;
  }
  trigger_ = action_count_ - 1;
  start_cell_ = 0;
  reachable_ = bfs_reachable();
  record_ = CoverageRecord(reachable_, cell_count_);
  distractor_ = Eigen::VectorXd::Zero(distractor_dim());
  reset();
}

Index Environment::next_cell(Index cell, Index action) const {
  if (action < 0 || action >= action_count_) {
    throw ValidationError("action " + std::to_string(action) + " outside [0, " +
                          std::to_string(action_count_) + ")");
  }
  if (config_.kind == EnvKind::kMultiroom) {
    const Index x = cell % grid_w_, y = cell / grid_w_;
    Index nx = x, ny = y;
    switch (action) {
      case 0: ++nx; break;
      case 1: --nx; break;
      case 2: ++ny; break;
      case 3: --ny; break;
      default: return cell;
    }
    if (nx < 0 || ny < 0 || nx >= grid_w_ || ny >= grid_h_) return cell;
    const Index n = ny * grid_w_ + nx;
    return open_[static_cast<std::size_t>(n)] ? n : cell;
  }
  if (action == 0) return std::max<Index>(cell - 1, 0);
  if (action == 1) return std::min<Index>(cell + 1, cell_count_ - 1);
  return cell;
}

Index Environment::room_of(Index cell) const {
  if (config_.kind != EnvKind::kMultiroom) return 0;
  return (cell % grid_w_) / (config_.size + 1);
}

Index Environment::bfs_reachable() const {
  std::vector<bool> seen(static_cast<std::size_t>(cell_count_), false);
  std::deque<Index> frontier{start_cell_};
  seen[static_cast<std::size_t>(start_cell_)] = true;
  Index count = 0;
  while (!frontier.empty()) {
    const Index c = frontier.front();
    frontier.pop_front();
    ++count;
    for (Index a = 0; a < action_count_; ++a) {
      const Index n = next_cell(c, a);
      if (!seen[static_cast<std::size_t>(n)]) {
        seen[static_cast<std::size_t>(n)] = true;
        frontier.push_back(n);
      }
    }
  }
  return count;
}

const Eigen::VectorXd& Environment::reset() {
  cell_ = start_cell_;
  step_ = 0;
  distractor_.setZero();
  episode_counts_.assign(static_cast<std::size_t>(cell_count_), 0);
  episode_counts_[static_cast<std::size_t>(cell_)] += 1;
  record_.visit(cell_);
  write_features();
  return features_;
}

StepResult Environment::step(Index action) {
  if (step_ >= horizon_) throw ValidationError("step called on a finished episode; reset first");
  cell_ = next_cell(cell_, action);
  if (config_.noisy_tv && action == trigger_) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (Index i = 0; i < distractor_.size(); ++i) distractor_(i) = u(rng_);
  }
  ++step_;
  ++record_.env_steps;
  episode_counts_[static_cast<std::size_t>(cell_)] += 1;
  record_.visit(cell_);
  write_features();
  return {features_, step_ >= horizon_};
}

void Environment::write_features() {
  features_ = Eigen::VectorXd::Zero(feature_dim());
  features_(cell_) = 1.0;
  if (distractor_.size() > 0) features_.tail(distractor_.size()) = distractor_;
}

Eigen::VectorXd Environment::action_features(Index action) const {
  if (action < 0 || action >= action_count_) {
    throw ValidationError("action " + std::to_string(action) + " outside [0, " +
                          std::to_string(action_count_) + ")");
  }
  return Eigen::VectorXd::Unit(action_count_, action);
}

}  // namespace cig
