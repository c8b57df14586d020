#pragma once

// Experiment orchestration: config files, method x env x seed matrices,
// per-run JSONL/CSV output, cross-seed aggregates, and the rollout-file and
// worked-example entry points used by the command-line tool.

#include "cig/planner.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cig {

struct EnvSpec {
  std::string name;
  EnvConfig config;
};

// One parsed config file. Defaults are the library defaults (M=5, T=15,
// gamma 0.99, momenta 0.99, ridge multiplier 1).
struct ExperimentConfig {
  std::string name = "experiment";
  std::vector<Method> methods;
  std::vector<EnvSpec> envs;
  std::vector<std::uint64_t> seeds;
  Index budget_steps = 20000;
  Index log_every = 500;
  double coverage_threshold = 0.9;
  double stop_at_coverage = 0.0;
  Index workers = 1;
  Index n_bootstrap = 2000;
  std::uint64_t bootstrap_seed = 0;
  EnsembleConfig ensemble;
  RewardSettings reward;
  PlannerSettings planner;
  TrainingSettings training;

  void validate() const;
  RunConfig run_config(Method method, const EnvSpec& env, std::uint64_t seed) const;
};

// INI-style grammar:
//
//   [experiment]   name, methods, seeds, budget_steps, log_every,
//                  coverage_threshold, stop_at_coverage, workers,
//                  n_bootstrap, bootstrap_seed
//   [env.<name>]   kind, size, rooms, stay_actions, horizon, noisy_tv,
//                  distractor_dims, seed           (one or more sections)
//   [ensemble]     members, width, residual, optimizer, momentum, lr
//   [reward]       ridge_multiplier, beta_sigma, norm_momentum, e3b_lambda,
//                  apt_k, head_hidden, head_lr
//   [planner]      horizon, candidates, temperature, gamma, action_repeat
//   [training]     prefill, pretrain_steps, train_every, gradient_steps,
//                  batch_size, buffer_capacity
//
// Lists are comma separated; seeds also accept an inclusive range "1-5".
// Comments start with ';' or '#'. Unknown sections or keys are errors.
ExperimentConfig parse_experiment_config(std::istream& is);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct IqmResult {
  double iqm = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// Mean after dropping floor(n/4) order statistics from each end; for n = 5
// that is the mean of the middle three.
double interquartile_mean(std::vector<double> values);
// IQM with a seeded percentile-bootstrap 95% interval (2.5 / 97.5).
IqmResult iqm_ci(const std::vector<double>& values, Index n_bootstrap = 2000,
                 std::uint64_t seed = 0);

struct RunRecord {
  std::string run_id;
  Method method = Method::kCig;
  std::string env;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  RunResult result;
};

struct AggregateRow {
  Method method = Method::kCig;
  std::string env;
  Index runs = 0;
  Index failed = 0;
  IqmResult final_coverage;
  // Runs that never reach the threshold count as the full budget.
  IqmResult steps_to_threshold;
  double median_steps_to_threshold = 0.0;
  Index reached_threshold = 0;
};

struct MatrixResult {
  std::vector<RunRecord> runs;
  std::vector<AggregateRow> aggregate;
};

std::string make_run_id(Method method, const std::string& env, std::uint64_t seed);

// Runs every (method, env, seed) cell with up to `workers` threads. Each cell
// writes <run_id>.jsonl and <run_id>.csv; aggregate.csv follows a barrier.
// A failing cell is recorded and the matrix continues.
MatrixResult run_matrix(const ExperimentConfig& config, const std::filesystem::path& out_dir);

// Median with the midpoint rule for even counts.
double median(std::vector<double> values);

std::vector<AggregateRow> aggregate_runs(const ExperimentConfig& config,
                                         const std::vector<RunRecord>& runs);

inline constexpr const char* kSummaryCsvHeader =
    "run_id,method,env,seed,env_steps,coverage,mean_reward,sigma2,mean_lifelong,"
    "mean_prefix_explained,episode_entropy";

void write_summary_csv(std::ostream& os, const RunRecord& run);
void write_aggregate_csv(std::ostream& os, const std::vector<AggregateRow>& rows);

// One JSON object per input line with "member_predictions" (M x T x d nested
// arrays) and either "sigma2" or "ridge"; optional "ridge_multiplier".
// Writes one JSON object per rollout with the CIG trace and every ablation.
// Returns the number of rollouts processed.
Index rewards_from_rollouts(std::istream& in, std::ostream& out);

// The four-step, three-member example: step 3 nearly orthogonal to its
// prefix, step 4 mostly inside it.
struct DemoExample {
  std::vector<MatrixXd> member_predictions;
  double sigma2 = 0.0;
  MatrixXd kernel;
  MatrixXd ridged;
  MatrixXd cholesky;
  VectorXd cig;
  VectorXd no_prefix;
  VectorXd lifelong;
  VectorXd prefix_explained;
};

DemoExample demo_example();
void print_demo(std::ostream& os, const DemoExample& demo);

}  // namespace cig
