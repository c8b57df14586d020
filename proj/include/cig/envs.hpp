#pragma once

// Vector-observation exploration environments. Task features are one-hot
// encodings of the agent's cell; Noisy-TV variants append distractor dims that
// are resampled only when the trigger action fires.

#include "cig/common.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace cig {

enum class EnvKind { kMultiroom, kCorridor, kChain };

std::string to_string(EnvKind kind);
EnvKind parse_env_kind(const std::string& name);

struct EnvConfig {
  EnvKind kind = EnvKind::kChain;
  // Room side for multiroom, number of cells for corridor and chain.
  Index size = 30;
  // Rooms laid out left to right; multiroom only.
  Index rooms = 3;
  // Extra no-op actions; corridor only.
  Index stay_actions = 3;
  // 0 picks the kind default: 100 for multiroom, 50 otherwise.
  Index horizon = 0;
  bool noisy_tv = false;
  Index distractor_dims = 4;
  std::uint64_t seed = 0;

  void validate() const;
  Index effective_horizon() const;
};

struct StepResult {
  Eigen::VectorXd features;
  bool done = false;
};

class CoverageRecord {
 public:
  // Identifiers are 0..id_space-1; id_space defaults to total_reachable.
  explicit CoverageRecord(Index total_reachable = 1, Index id_space = 0);

  void visit(Index cell);
  bool visited(Index cell) const;
  Index visited_count() const { return count_; }
  Index total_reachable() const { return total_; }
  std::uint64_t env_steps = 0;

 private:
  std::vector<bool> seen_;
  Index total_ = 1;
  Index count_ = 0;
};

double coverage(const CoverageRecord& record);

// Shannon entropy (nats) of the normalized visit counts.
double episode_entropy(const std::vector<std::uint64_t>& counts);

class Environment {
 public:
  explicit Environment(const EnvConfig& config);

  const EnvConfig& config() const { return config_; }
  Index action_count() const { return action_count_; }
  // -1 when there is no trigger action.
  Index trigger_action() const { return trigger_; }
  Index cell_count() const { return cell_count_; }
  Index task_dim() const { return cell_count_; }
  Index distractor_dim() const { return config_.noisy_tv ? config_.distractor_dims : 0; }
  Index feature_dim() const { return task_dim() + distractor_dim(); }
  Index horizon() const { return horizon_; }
  Index reachable_count() const { return reachable_; }
  Index start_cell() const { return start_cell_; }

  // Starts a new episode; the coverage record persists across episodes.
  const Eigen::VectorXd& reset();
  StepResult step(Index action);

  const Eigen::VectorXd& features() const { return features_; }
  Index cell() const { return cell_; }
  Index step_in_episode() const { return step_; }
  const CoverageRecord& coverage_record() const { return record_; }
  const std::vector<std::uint64_t>& episode_counts() const { return episode_counts_; }

  // Deterministic successor cell of `cell` under `action`.
  Index next_cell(Index cell, Index action) const;
  // Index of the room holding `cell` (0 for kinds without rooms).
  Index room_of(Index cell) const;

  // One-hot encoding of an action, the planner's action features.
  Eigen::VectorXd action_features(Index action) const;

 private:
  Index bfs_reachable() const;
  void write_features();

  EnvConfig config_;
  Index action_count_ = 0;
  Index trigger_ = -1;
  Index cell_count_ = 0;
  Index horizon_ = 0;
  Index reachable_ = 0;
  Index start_cell_ = 0;
  // multiroom layout: true where the agent may stand.
  std::vector<bool> open_;
  Index grid_w_ = 0;
  Index grid_h_ = 0;

  std::mt19937_64 rng_;
  Index cell_ = 0;
  Index step_ = 0;
  Eigen::VectorXd distractor_;
  Eigen::VectorXd features_;
  CoverageRecord record_;
  std::vector<std::uint64_t> episode_counts_;
};

}  // namespace cig
