#pragma once

// Model-based exploration agent: replay buffer, imagined rollouts under the
// ensemble mean, rollout scoring by any intrinsic reward, and random-shooting
// action selection with softmax commitment.

#include "cig/aleatoric.hpp"
#include "cig/baselines.hpp"
#include "cig/ensemble.hpp"
#include "cig/envs.hpp"
#include "cig/reward.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cig {

enum class Method {
  kCig,
  kCigNoPrefix,
  kCigLifelongOnly,
  kCigNoTrace,
  kP2e,
  kE3b,
  kE3bXP2e,
  kApt,
  kRndLike,
};

std::string to_string(Method method);
Method parse_method(const std::string& name);
const std::vector<Method>& all_methods();
// rnd_like and apt score transitions through a NoveltyHead.
bool uses_novelty_head(Method method);

class ReplayBuffer {
 public:
  ReplayBuffer(Index capacity, Index state_dim, Index action_dim);

  void add(const VectorXd& state, const VectorXd& action, const VectorXd& next_state);
  Index size() const { return size_; }
  Index capacity() const { return states_.rows(); }
  std::uint64_t insertion_count() const { return inserted_; }

  // Logical index 0 is the oldest stored transition.
  VectorXd state(Index i) const { return states_.row(physical(i)).transpose(); }
  VectorXd action(Index i) const { return actions_.row(physical(i)).transpose(); }
  VectorXd next_state(Index i) const { return next_.row(physical(i)).transpose(); }

  // Uniform without replacement; batch is clipped to size().
  TransitionBatch sample(Index batch, std::mt19937_64& rng) const;

 private:
  Index physical(Index i) const;

  MatrixXd states_;
  MatrixXd actions_;
  MatrixXd next_;
  Index size_ = 0;
  std::uint64_t inserted_ = 0;
};

inline constexpr double kDivergenceNorm = 1e6;

struct ImaginedRollout {
  VectorXd start_state;
  std::vector<Index> actions;
  // (length + 1) x d_s; row 0 is the start state.
  MatrixXd states;
  // M matrices of shape length x d.
  std::vector<MatrixXd> member_predictions;
  bool truncated = false;

  Index length() const { return states.rows() - 1; }
};

// Propagates every action sequence through the ensemble mean in one batch.
// A rollout whose mean state leaves the 1e6 ball, or whose member
// predictions go non-finite, stops before that step with `truncated` set.
std::vector<ImaginedRollout> imagine_batch(const EnsembleModel& model, const VectorXd& start,
                                           const std::vector<std::vector<Index>>& actions,
                                           Index action_count);
ImaginedRollout imagine(const EnsembleModel& model, const VectorXd& start,
                        const std::vector<Index>& actions, Index action_count);
// The sampler sees the step index and the current imagined state.
ImaginedRollout imagine(const EnsembleModel& model, const VectorXd& start,
                        const std::function<Index(Index, const VectorXd&)>& policy, Index horizon,
                        Index action_count);

// Softmax over scores / temperature; temperature 0 is argmax with ties going
// to the lowest index.
Index select_index(const std::vector<double>& scores, double temperature, std::mt19937_64& rng);

struct RewardSettings {
  Method method = Method::kCig;
  double ridge_multiplier = 1.0;
  double beta_sigma = 0.99;
  double norm_momentum = 0.99;
  double e3b_lambda = 0.1;
  Index apt_k = 12;
  Index head_hidden = 32;
  double head_lr = 1e-3;
};

struct RewardContext {
  AleatoricEstimate sigma;
  const NoveltyHead* head = nullptr;
};

// Raw per-step rewards of one imagined rollout under the configured method.
VectorXd rollout_rewards(const ImaginedRollout& rollout, const RewardSettings& settings,
                         const RewardContext& context, Index action_count);

struct PlannerSettings {
  Index horizon = 15;
  Index candidates = 64;
  double temperature = 0.5;
  double gamma = 0.99;
  // Probability that a candidate repeats its previous action instead of
  // drawing a fresh uniform one; 0 gives i.i.d. uniform sequences.
  double action_repeat = 0.0;
};

class Planner {
 public:
  Planner(PlannerSettings settings, RewardSettings reward, Index action_count,
          std::uint64_t seed);

  struct Decision {
    Index action = 0;
    Index candidate = 0;
    std::vector<double> scores;
    ImaginedRollout rollout;
    VectorXd raw_rewards;
  };

  Decision plan(const EnsembleModel& model, const VectorXd& state, const RewardContext& context);

  std::vector<std::vector<Index>> sample_candidates();

  // Discounted sum of normalized rewards for each candidate; updates the
  // normalizer with every candidate's raw rewards.
  std::vector<double> score(const std::vector<VectorXd>& raw_rewards);

  const NormalizerState& normalizer() const { return normalizer_; }
  const PlannerSettings& settings() const { return settings_; }

 private:
  PlannerSettings settings_;
  RewardSettings reward_;
  Index action_count_;
  std::mt19937_64 rng_;
  NormalizerState normalizer_;
};

struct TrainingSettings {
  Index prefill = 500;
  Index pretrain_steps = 100;
  Index train_every = 10;
  Index gradient_steps = 5;
  Index batch_size = 64;
  Index buffer_capacity = 100000;
  double lr = 1e-3;
};

struct RunConfig {
  std::string env_name = "env";
  EnvConfig env;
  EnsembleConfig ensemble;
  RewardSettings reward;
  PlannerSettings planner;
  TrainingSettings training;
  std::uint64_t seed = 0;
  Index budget_steps = 20000;
  Index log_every = 500;
  double coverage_threshold = 0.9;
  // Ends the run once coverage reaches this value; 0 disables.
  double stop_at_coverage = 0.0;

  void validate() const;
};

struct LogRow {
  std::uint64_t env_steps = 0;
  double coverage = 0.0;
  double mean_reward = 0.0;
  double sigma2 = 0.0;
  double mean_lifelong = 0.0;
  double mean_prefix_explained = 0.0;
  double episode_entropy = 0.0;
};

struct EpisodeSummary {
  Index episode = 0;
  std::uint64_t env_steps = 0;
  double coverage = 0.0;
  double entropy = 0.0;
};

struct RunResult {
  double final_coverage = 0.0;
  std::uint64_t env_steps = 0;
  // First env step at which coverage reached the threshold.
  std::optional<std::uint64_t> steps_to_threshold;
  // First env step spent in the last room (multiroom only).
  std::optional<std::uint64_t> terminal_room_first_visit;
  double return_mean = 0.0;
  double return_stddev = 0.0;
  double final_sigma2 = 0.0;
  std::vector<LogRow> rows;
};

class RunObserver {
 public:
  virtual ~RunObserver() = default;
  virtual void on_log(const LogRow&) {}
  virtual void on_episode(const EpisodeSummary&) {}
};

RunResult run_exploration(const RunConfig& config, RunObserver* observer = nullptr);

}  // namespace cig
