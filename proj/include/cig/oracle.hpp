#pragma once

// Brute-force verifiers for the identities and bounds the reward relies on.
// Each check owns its generator and reports the worst error it saw.

#include "cig/common.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace cig {

struct OracleReport {
  std::string check_name;
  Index instances = 0;
  double max_abs_error = 0.0;
  bool pass = false;
  double tolerance = 0.0;
  // Free-form note, e.g. an under-powered Monte-Carlo run.
  std::string note;

  // Sets pass from max_abs_error <= tolerance.
  void finish();
};

// Sum of per-step CIG rewards against an eigenvalue log det of K + ridge*I.
OracleReport verify_logdet_decomposition(Index n_instances = 1000, Index t_max = 50,
                                         std::uint64_t seed = 1);

// Dense Td x Td log det(sigma2 I + C) against the M x M Sylvester route, and
// the low-rank untraced reward total against the same value.
OracleReport verify_sylvester(Index n_instances = 1000, std::uint64_t seed = 2);

// rank(C) <= M - 1 and rank(K) <= min(T, (M - 1) d) over the
// {2,3,5} x {3,15,40} x {1,4,16} grid; the error is the largest excess rank.
OracleReport verify_rank_bounds(Index instances_per_cell = 2, std::uint64_t seed = 3);

struct EntropyEstimate {
  double value = 0.0;
  double standard_error = 0.0;
};

// -mean log p(x) over samples from the equal-weight mixture of N(mu_k, sigma2 I).
// means: M x n, one component per row.
EntropyEstimate mixture_entropy_mc(const Eigen::MatrixXd& means, double sigma2, Index samples,
                                   std::mt19937_64& rng);

// 0.5 log det(2 pi e Sigma) with Sigma the moment-matched covariance
// sigma2 I + (1/M) sum_k (mu_k - mean)(mu_k - mean)^T.
double gaussian_entropy_bound(const Eigen::MatrixXd& means, double sigma2);

// Error per instance is max(0, H_mc - bound - 3 SE); tolerance 0.
OracleReport verify_gaussian_bound(Index n_instances = 50, Index mc_samples = 1000000,
                                   std::uint64_t seed = 4);

// Monotonicity and concavity of log det(K + ridge*I) on the PSD cone.
OracleReport verify_monotonicity_concavity(Index n_instances = 10000, std::uint64_t seed = 5);
// Orthogonal step equality and the redundant-step sandwich, on random alpha
// constructions and on a duplicated step at both ends of the scale.
OracleReport verify_limiting_cases(Index n_instances = 10000, std::uint64_t seed = 6);
// 0 <= r_diag - r_t <= -log(1 - (t-1) eps^2), and <= 2 (t-1) eps^2 when
// (t-1) eps^2 <= 1/2.
OracleReport verify_frontier_inactivity(Index n_instances = 10000, std::uint64_t seed = 7);
// All three of the above folded into one report.
OracleReport verify_propositions(Index n_instances = 10000, std::uint64_t seed = 8);

// Blocks C_jt = c_jt I_d: log det(C + sigma2 I) = d log det(K + sigma2 d I) - d T log d.
OracleReport verify_kronecker(Index n_instances = 1000, std::uint64_t seed = 9);
// p2e reward times d equals K_tt; tolerance 1e-12 relative to max(1, K_tt).
OracleReport verify_p2e_diagonal(Index n_instances = 1000, std::uint64_t seed = 10);
// Member analytic gradients against central differences (h = 1e-5);
// error is the norm-wise relative error, tolerance 1e-4.
OracleReport verify_gradients(Index n_pairs = 100, std::uint64_t seed = 11);

struct OracleSuiteOptions {
  Index scale_divisor = 1;  // >1 shrinks every instance count, for quick runs
  Index mc_samples = 1000000;
  std::uint64_t seed = 0;
  Index workers = 0;  // 0 = hardware concurrency
};

// Every check above, run concurrently; reports in a fixed order.
std::vector<OracleReport> run_oracle_suite(const OracleSuiteOptions& options = {});

}  // namespace cig
