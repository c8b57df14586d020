#pragma once

// Per-step intrinsic rewards from the ridged kernel.
//
// With K + ridge*I = L L^T, the squared Cholesky pivot L_tt^2 is the Schur
// complement of step t given steps < t:
//
//   L_tt^2 = K_tt + ridge - k_<t^T (K_<t + ridge*I)^-1 k_<t
//
// so r_t = log L_tt^2 is causal and sum_t r_t = log det(K + ridge*I).

#include "cig/common.hpp"
#include "cig/kernel.hpp"
#include "cig/stats.hpp"

#include <cmath>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cig {

enum class RewardVariant { kCig, kNoTraceReduction, kNoPrefixRedundancy, kLifelongOnly };

inline std::string_view to_string(RewardVariant v) {
  switch (v) {
    case RewardVariant::kCig: return "cig";
    case RewardVariant::kNoTraceReduction: return "no_trace_reduction";
    case RewardVariant::kNoPrefixRedundancy: return "no_prefix_redundancy";
    case RewardVariant::kLifelongOnly: return "lifelong_only";
  }
  return "unknown";
}

template <typename Scalar>
struct RewardTrace {
  Vector<Scalar> rewards;
  // K_tt, the per-step disagreement.
  Vector<Scalar> lifelong;
  // k_<t^T (K_<t + ridge*I)^-1 k_<t; zero at the first step.
  Vector<Scalar> prefix_explained;
  Scalar ridge = Scalar(0);
  RewardVariant variant = RewardVariant::kCig;

  Index horizon() const { return rewards.size(); }
  Scalar total() const { return rewards.sum(); }
};

// Lower Cholesky factor plus the per-pivot Schur terms.
template <typename Scalar>
struct CausalCholesky {
  Matrix<Scalar> lower;
  // Squared pivots L_tt^2.
  Vector<Scalar> pivots;
  // sum_{j<t} L_tj^2, the quantity subtracted from A_tt.
  Vector<Scalar> explained;
};

// Row-by-row (Cholesky-Banachiewicz) factorization without pivoting. Row t
// reads only rows <= t, so factoring a leading block reproduces the same
// leading rows bit for bit. Throws CholeskyError at the first pivot <= 0.
template <typename Derived>
CausalCholesky<typename Derived::Scalar> causal_cholesky(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  const Index n = a.rows();
  if (a.cols() != n) throw ValidationError("Cholesky needs a square matrix");
  CausalCholesky<Scalar> out;
  out.lower = Matrix<Scalar>::Zero(n, n);
  out.pivots.resize(n);
  out.explained.resize(n);
  auto& L = out.lower;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < i; ++j) {
      Scalar s = a(i, j);
      for (Index k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
      L(i, j) = s / L(j, j);
    }
    Scalar explained = Scalar(0);
    for (Index k = 0; k < i; ++k) explained += L(i, k) * L(i, k);
    const Scalar pivot = a(i, i) - explained;
    if (!(pivot > Scalar(0))) throw CholeskyError(i, double(pivot));
    L(i, i) = std::sqrt(pivot);
    out.pivots(i) = pivot;
    out.explained(i) = explained;
  }
  return out;
}

template <typename Scalar>
RewardTrace<Scalar> cig_rewards(const KernelMatrix<Scalar>& kernel) {
  RewardTrace<Scalar> trace;
  trace.variant = RewardVariant::kCig;
  trace.ridge = kernel.ridge();
  trace.lifelong = kernel.gram().diagonal();
  if (kernel.horizon() == 0) return trace;
  const auto chol = causal_cholesky(kernel.ridged());
  // Scalar log per entry: Eigen's packet log can differ in the last bit from
  // std::log, which would make the result depend on the horizon.
  trace.rewards = chol.pivots.unaryExpr([](Scalar p) { return std::log(p); });
  trace.prefix_explained = chol.explained;
  return trace;
}

template <typename Scalar>
RewardTrace<Scalar> no_prefix_rewards(const KernelMatrix<Scalar>& kernel) {
  if (!(kernel.ridge() > Scalar(0)) && kernel.horizon() > 0) {
    throw ValidationError("no-prefix reward needs ridge > 0");
  }
  RewardTrace<Scalar> trace;
  trace.variant = RewardVariant::kNoPrefixRedundancy;
  trace.ridge = kernel.ridge();
  trace.lifelong = kernel.gram().diagonal();
  const Scalar ridge = kernel.ridge();
  trace.rewards = trace.lifelong.unaryExpr([ridge](Scalar k) { return std::log(k + ridge); });
  trace.prefix_explained = Vector<Scalar>::Zero(kernel.horizon());
  return trace;
}

// log K_tt: neither prefix correction nor ridge.
template <typename Scalar>
RewardTrace<Scalar> lifelong_only_rewards(const KernelMatrix<Scalar>& kernel) {
  const Vector<Scalar> diag = kernel.gram().diagonal();
  for (Index t = 0; t < diag.size(); ++t) {
    if (!(diag(t) > Scalar(0))) {
      throw ValidationError("lifelong-only reward undefined at step " + std::to_string(t) +
                            ": K_tt = " + std::to_string(double(diag(t))));
    }
  }
  RewardTrace<Scalar> trace;
  trace.variant = RewardVariant::kLifelongOnly;
  trace.ridge = kernel.ridge();
  trace.lifelong = diag;
  trace.rewards = diag.unaryExpr([](Scalar k) { return std::log(k); });
  trace.prefix_explained = Vector<Scalar>::Zero(diag.size());
  return trace;
}

// Untraced ablation on the dense Td x Td matrix sigma2*I + C, pivots grouped
// per step. The constant d*log(sigma2) per step is removed, so
// sum_t r_t + Td*log(sigma2) = log det(sigma2*I + C).
template <typename Scalar>
RewardTrace<Scalar> no_trace_reduction_rewards(const FullCovariance<Scalar>& full, Index horizon) {
  if (horizon != full.horizon()) {
    throw ValidationError("horizon " + std::to_string(horizon) +
                          " does not match covariance horizon " +
                          std::to_string(full.horizon()));
  }
  if (!(full.sigma2() > Scalar(0))) throw ValidationError("sigma2 must be > 0");
  const Index d = full.dim();
  Matrix<Scalar> sigma = full.materialize();
  Vector<Scalar> block_traces(horizon);
  for (Index t = 0; t < horizon; ++t) {
    block_traces(t) = sigma.block(t * d, t * d, d, d).trace();
  }
  sigma.diagonal().array() += full.sigma2();
  const auto chol = causal_cholesky(sigma);

  RewardTrace<Scalar> trace;
  trace.variant = RewardVariant::kNoTraceReduction;
  trace.ridge = full.sigma2() * Scalar(d);
  trace.lifelong = block_traces;
  trace.rewards.resize(horizon);
  trace.prefix_explained.resize(horizon);
  const Scalar log_sigma2 = std::log(full.sigma2());
  for (Index t = 0; t < horizon; ++t) {
    trace.rewards(t) =
        chol.pivots.segment(t * d, d).array().log().sum() - Scalar(d) * log_sigma2;
    trace.prefix_explained(t) = chol.explained.segment(t * d, d).sum();
  }
  return trace;
}

// Same per-step values as no_trace_reduction_rewards, computed in M x M space:
// r_t = log det(I + G_<=t / sigma2) - log det(I + G_<t / sigma2), where G_<=t is
// the member Gram of the first t steps. prefix_explained is not reported here.
template <typename Scalar>
RewardTrace<Scalar> no_trace_reduction_rewards_low_rank(const FullCovariance<Scalar>& full) {
  if (!(full.sigma2() > Scalar(0))) throw ValidationError("sigma2 must be > 0");
  const Index T = full.horizon();
  const Index d = full.dim();
  const Index M = full.members();
  RewardTrace<Scalar> trace;
  trace.variant = RewardVariant::kNoTraceReduction;
  trace.ridge = full.sigma2() * Scalar(d);
  trace.rewards.resize(T);
  trace.lifelong.resize(T);
  trace.prefix_explained = Vector<Scalar>::Zero(T);
  Matrix<Scalar> prefix_gram = Matrix<Scalar>::Zero(M, M);
  Scalar previous = Scalar(0);
  for (Index t = 0; t < T; ++t) {
    const auto block = full.factor().middleRows(t * d, d);
    Matrix<Scalar> step_gram = block.transpose() * block;
    trace.lifelong(t) = step_gram.trace();
    prefix_gram += step_gram;
    Matrix<Scalar> a = prefix_gram / full.sigma2();
    a.diagonal().array() += Scalar(1);
    Eigen::LLT<Matrix<Scalar>> llt(a.template selfadjointView<Eigen::Lower>());
    if (llt.info() != Eigen::Success) throw CholeskyError(t, 0.0);
    const Scalar current = Scalar(2) * llt.matrixLLT().diagonal().array().log().sum();
    trace.rewards(t) = current - previous;
    previous = current;
  }
  return trace;
}

struct PrefixDiagnostics {
  std::vector<double> explained_fraction;
  std::optional<double> spearman_vs_lifelong;
};

// Share of each step's disagreement explained by its prefix, and the rank
// agreement between the rewards and log K_tt within the rollout.
template <typename Scalar>
PrefixDiagnostics prefix_diagnostics(const RewardTrace<Scalar>& trace) {
  if (trace.variant != RewardVariant::kCig) {
    throw ValidationError("prefix diagnostics are defined for CIG traces only");
  }
  const Index T = trace.horizon();
  PrefixDiagnostics out;
  out.explained_fraction.resize(static_cast<std::size_t>(T));
  std::vector<double> rewards(static_cast<std::size_t>(T));
  std::vector<double> lifelong(static_cast<std::size_t>(T));
  for (Index t = 0; t < T; ++t) {
    const double k = double(trace.lifelong(t));
    out.explained_fraction[t] = k > 0.0 ? double(trace.prefix_explained(t)) / k : 0.0;
    rewards[t] = double(trace.rewards(t));
    // Ranks of K_tt equal ranks of log K_tt.
    lifelong[t] = k;
  }
  if (T >= 2) out.spearman_vs_lifelong = spearman(rewards, lifelong);
  return out;
}

// Running z-score statistics; EMA over batch mean and batch variance.
struct NormalizerState {
  double mean = 0.0;
  double variance = 0.0;
  double momentum = 0.99;
  bool initialized = false;
  std::size_t batches = 0;

  double stddev() const { return std::sqrt(variance); }
};

inline constexpr double kNormalizerStdFloor = 1e-8;

// Folds the batch into the running statistics, then standardizes the batch
// with the updated statistics. The first batch initializes them directly.
inline std::pair<std::vector<double>, NormalizerState> normalize_rewards(
    std::span<const double> raw, NormalizerState state) {
  if (raw.empty()) return {{}, state};
  double batch_mean = 0.0;
  for (double r : raw) batch_mean += r;
  batch_mean /= double(raw.size());
  double batch_var = 0.0;
  for (double r : raw) batch_var += (r - batch_mean) * (r - batch_mean);
  batch_var /= double(raw.size());

  if (!state.initialized) {
    state.mean = batch_mean;
    state.variance = batch_var;
    state.initialized = true;
  } else {
    state.mean = state.momentum * state.mean + (1.0 - state.momentum) * batch_mean;
    state.variance = state.momentum * state.variance + (1.0 - state.momentum) * batch_var;
  }
  ++state.batches;
  const double scale = std::max(state.stddev(), kNormalizerStdFloor);
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - state.mean) / scale;
  return {std::move(out), state};
}

// One JSON object per step: {step, reward, lifelong, prefix_explained, variant, ridge}.
template <typename Scalar>
void write_trace_jsonl(std::ostream& os, const RewardTrace<Scalar>& trace) {
  const auto old_precision = os.precision(17);
  for (Index t = 0; t < trace.horizon(); ++t) {
    os << "{\"step\":" << (t + 1) << ",\"reward\":" << double(trace.rewards(t))
       << ",\"lifelong\":" << double(trace.lifelong(t))
       << ",\"prefix_explained\":" << double(trace.prefix_explained(t)) << ",\"variant\":\""
       << to_string(trace.variant) << "\",\"ridge\":" << double(trace.ridge) << "}\n";
  }
  os.precision(old_precision);
}

}  // namespace cig
