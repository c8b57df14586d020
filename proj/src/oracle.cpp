#include "cig/oracle.hpp"

#include "cig/baselines.hpp"
#include "cig/ensemble.hpp"
#include "cig/kernel.hpp"
#include "cig/reward.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <numbers>
#include <thread>

namespace cig {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd gaussian_matrix(std::mt19937_64& rng, Index rows, Index cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  MatrixXd m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

Index uniform_index(std::mt19937_64& rng, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

double log_uniform(std::mt19937_64& rng, double lo_exp, double hi_exp) {
  return std::pow(10.0, std::uniform_real_distribution<double>(lo_exp, hi_exp)(rng));
}

double logdet_eigen(const MatrixXd& spd) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(spd, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().array().log().sum();
}

double logdet_llt(const MatrixXd& spd) {
  Eigen::LLT<MatrixXd> llt(spd);
  if (llt.info() != Eigen::Success) throw NumericalError("oracle: matrix is not positive definite");
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

std::vector<MatrixXd> random_predictions(std::mt19937_64& rng, Index m, Index t, Index d,
                                         double scale) {
  std::vector<MatrixXd> out;
  for (Index k = 0; k < m; ++k) out.push_back(gaussian_matrix(rng, t, d, scale));
  return out;
}

struct Tracker {
  double worst = 0.0;
  Index count = 0;
  void add(double error) {
    ++count;
    if (!(error <= worst)) worst = error;  // NaN propagates as a failure
  }
};

OracleReport make_report(std::string name, const Tracker& t, double tolerance) {
  OracleReport r;
  r.check_name = std::move(name);
  r.instances = t.count;
  r.max_abs_error = t.worst;
  r.tolerance = tolerance;
  r.finish();
  return r;
}

double j_tilde(const MatrixXd& k, double ridge) {
  MatrixXd a = k;
  a.diagonal().array() += ridge;
  return logdet_llt(a);
}

}  // namespace

void OracleReport::finish() { pass = max_abs_error <= tolerance; }

OracleReport verify_logdet_decomposition(Index n_instances, Index t_max, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tracker tr;
  // Constructed: a single step, and K = 0.
  {
    const double ridge = 0.37;
    MatrixXd k(1, 1);
    k << 2.5;
    const auto trace = cig_rewards(KernelMatrix<double>::from_gram(k, ridge));
    tr.add(std::abs(trace.rewards(0) - std::log(2.5 + ridge)));
    const Index t = std::max<Index>(1, t_max);
    const auto zero = cig_rewards(KernelMatrix<double>::from_gram(MatrixXd::Zero(t, t), ridge));
    tr.add(std::abs(zero.total() - double(t) * std::log(ridge)));
  }
  for (Index i = 0; i < n_instances; ++i) {
    const Index t = uniform_index(rng, 1, std::max<Index>(1, t_max));
    const Index m = uniform_index(rng, 2, 6);
    const Index d = uniform_index(rng, 1, 8);
    const double scale = log_uniform(rng, -2.0, 1.0);
    const double ridge = log_uniform(rng, -3.0, 0.0);
    const auto dev = compute_deviations(random_predictions(rng, m, t, d, scale));
    const auto kernel = build_kernel(dev, ridge);
    const double total = cig_rewards(kernel).total();
    tr.add(std::abs(total - logdet_eigen(kernel.ridged())));
  }
  return make_report("logdet_decomposition", tr, 1e-9);
}

OracleReport verify_sylvester(Index n_instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tracker tr;
  auto check = [&](const DeviationTensor<double>& dev, double sigma2,
                   std::optional<double> closed_form) {
    const auto full = build_full_covariance_gram(dev, sigma2);
    const Index td = full.stacked_dim();
    const Index m = full.members();
    MatrixXd dense = full.materialize();
    dense.diagonal().array() += sigma2;
    const double lhs = logdet_eigen(dense);
    MatrixXd small = full.gram();
    small.diagonal().array() += sigma2;
    const double rhs = double(td - m) * std::log(sigma2) + logdet_eigen(small);
    tr.add(std::abs(lhs - rhs));
    // The untraced reward telescopes to log det(I + C / sigma2).
    const double low_rank = no_trace_reduction_rewards_low_rank(full).total();
    tr.add(std::abs(low_rank + double(td) * std::log(sigma2) - lhs));
    if (closed_form) tr.add(std::abs(lhs - *closed_form));
  };
  {
    // C = 0: identical members.
    const MatrixXd p = MatrixXd::Constant(3, 2, 0.4);
    const double sigma2 = 0.3;
    check(compute_deviations(std::vector<MatrixXd>{p, p, p}), sigma2,
          6.0 * std::log(sigma2));
  }
  for (Index i = 0; i < n_instances; ++i) {
    const Index t = uniform_index(rng, 1, 6);
    const Index d = uniform_index(rng, 1, 4);
    const double sigma2 = log_uniform(rng, -2.0, 1.0);
    const double scale = log_uniform(rng, -1.0, 0.5);
    if (i % 4 == 0) {
      // M = 2: C = (1/2)(d1 d1^T + d2 d2^T) with d2 = -d1 has one eigenvalue ||d1||^2.
      const auto dev = compute_deviations(random_predictions(rng, 2, t, d, scale));
      const double lambda = dev.stacked(0).squaredNorm();
      check(dev, sigma2, double(t * d) * std::log(sigma2) + std::log1p(lambda / sigma2));
    } else {
      const Index m = uniform_index(rng, 2, 5);
      check(compute_deviations(random_predictions(rng, m, t, d, scale)), sigma2, std::nullopt);
    }
  }
  auto r = make_report("sylvester", tr, 1e-9);
  r.instances = n_instances + 1;
  return r;
}

OracleReport verify_rank_bounds(Index instances_per_cell, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tracker tr;
  for (Index m : {2, 3, 5}) {
    for (Index t : {3, 15, 40}) {
      for (Index d : {1, 4, 16}) {
        for (Index i = 0; i < instances_per_cell; ++i) {
          const auto dev = compute_deviations(random_predictions(rng, m, t, d, 1.0));
          const auto full = build_full_covariance_gram(dev, 1.0);
          const Index rank_c = numerical_rank(full.materialize(), 1e-9);
          const Index rank_k = numerical_rank(build_kernel(dev, 0.0).gram(), 1e-9);
          const Index bound_k = std::min(t, (m - 1) * d);
          tr.add(double(std::max<Index>(0, rank_c - (m - 1))));
          tr.count--;
          tr.add(double(std::max<Index>(0, rank_k - bound_k)));
        }
      }
    }
  }
  return make_report("rank_bounds", tr, 0.0);
}

EntropyEstimate mixture_entropy_mc(const MatrixXd& means, double sigma2, Index samples,
                                   std::mt19937_64& rng) {
  const Index m = means.rows();
  const Index n = means.cols();
  if (m < 1 || n < 1) throw ValidationError("mixture needs at least one component and dimension");
  if (!(sigma2 > 0.0)) throw ValidationError("mixture sigma2 must be > 0");
  if (samples < 2) throw ValidationError("mixture entropy needs at least 2 samples");
  const double sigma = std::sqrt(sigma2);
  const double log_norm =
      -std::log(double(m)) - 0.5 * double(n) * std::log(2.0 * std::numbers::pi * sigma2);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<Index> pick(0, m - 1);
  std::vector<double> x(static_cast<std::size_t>(n));
  std::vector<double> exponents(static_cast<std::size_t>(m));
  double sum = 0.0, sum_sq = 0.0;
  for (Index s = 0; s < samples; ++s) {
    const Index c = pick(rng);
    for (Index j = 0; j < n; ++j) x[std::size_t(j)] = means(c, j) + sigma * normal(rng);
    double top = -std::numeric_limits<double>::infinity();
    for (Index k = 0; k < m; ++k) {
      double q = 0.0;
      for (Index j = 0; j < n; ++j) {
        const double diff = x[std::size_t(j)] - means(k, j);
        q += diff * diff;
      }
      exponents[std::size_t(k)] = -0.5 * q / sigma2;
      top = std::max(top, exponents[std::size_t(k)]);
    }
    double acc = 0.0;
    for (Index k = 0; k < m; ++k) acc += std::exp(exponents[std::size_t(k)] - top);
    const double neg_log_p = -(log_norm + top + std::log(acc));
    sum += neg_log_p;
    sum_sq += neg_log_p * neg_log_p;
  }
  const double mean = sum / double(samples);
  const double var = std::max(0.0, (sum_sq - double(samples) * mean * mean) / double(samples - 1));
  return {mean, std::sqrt(var / double(samples))};
}

double gaussian_entropy_bound(const MatrixXd& means, double sigma2) {
  const Index n = means.cols();
  const MatrixXd centred = means.rowwise() - means.colwise().mean();
  MatrixXd cov = centred.transpose() * centred / double(means.rows());
  cov.diagonal().array() += sigma2;
  return 0.5 * (double(n) * std::log(2.0 * std::numbers::pi * std::numbers::e) + logdet_llt(cov));
}

OracleReport verify_gaussian_bound(Index n_instances, Index mc_samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tracker tr;
  for (Index i = 0; i < n_instances; ++i) {
    const Index n = uniform_index(rng, 1, 6);
    const Index m = uniform_index(rng, 1, 4);
    const double sigma2 = log_uniform(rng, -1.0, 0.5);
    const double spread = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
    const MatrixXd means = gaussian_matrix(rng, m, n, spread);
    const auto h = mixture_entropy_mc(means, sigma2, mc_samples, rng);
    tr.add(std::max(0.0, h.value - gaussian_entropy_bound(means, sigma2) -
                             3.0 * h.standard_error));
  }
  auto r = make_report("gaussian_bound", tr, 0.0);
  if (mc_samples < 10000) {
    r.note = "mc_samples = " + std::to_string(mc_samples) +
             " is below 1e4; the 3 SE margin is loose";
  }
  return r;
}

OracleReport verify_monotonicity_concavity(Index n_instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tracker tr;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Index i = 0; i < n_instances; ++i) {
    const Index t = uniform_index(rng, 1, 12);
    const double ridge = log_uniform(rng, -3.0, 1.0);
    auto psd = [&] {
      const MatrixXd f = gaussian_matrix(rng, t, uniform_index(rng, 1, t + 2));
      return MatrixXd(f * f.transpose() * log_uniform(rng, -2.0, 1.0));
    };
    const MatrixXd k1 = psd(), k2 = psd(), p = psd();
    // Constructed every tenth instance: a zero increment must leave J unchanged.
    const MatrixXd inc = i % 10 == 0 ? MatrixXd::Zero(t, t) : p;
    tr.add(std::max(0.0, j_tilde(k1, ridge) - j_tilde(k1 + inc, ridge)));
    const double theta = unit(rng);
    const double chord = theta * j_tilde(k1, ridge) + (1.0 - theta) * j_tilde(k2, ridge);
    tr.add(std::max(0.0, chord - j_tilde(theta * k1 + (1.0 - theta) * k2, ridge)));
    tr.count--;
  }
  return make_report("monotonicity_concavity", tr, 1e-9);
}

OracleReport verify_limiting_cases(Index n_instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tracker tr;
  for (Index i = 0; i < n_instances; ++i) {
    const double ridge = log_uniform(rng, -2.0, 0.0);
    const Index t = uniform_index(rng, 2, 10);  // 1-based step under test
    const Index r = t + uniform_index(rng, 0, 3);
    const double scale = std::sqrt(ridge * log_uniform(rng, -2.0, 1.5));
    MatrixXd f = gaussian_matrix(rng, t, r, scale);
    if (i % 2 == 0) {
      // Orthogonal: strip the prefix span out of row t.
      const MatrixXd prefix = f.topRows(t - 1).transpose();
      Eigen::ColPivHouseholderQR<MatrixXd> qr(prefix);
      const MatrixXd q = MatrixXd(qr.householderQ()).leftCols(qr.rank());
      const VectorXd row = f.row(t - 1).transpose();
      f.row(t - 1) = (row - q * (q.transpose() * row)).transpose();
      MatrixXd k = f * f.transpose();
      k.row(t - 1).head(t - 1).setZero();
      k.col(t - 1).head(t - 1).setZero();
      const auto trace = cig_rewards(KernelMatrix<double>::from_gram(k, ridge));
      tr.add(std::abs(trace.rewards(t - 1) - std::log(k(t - 1, t - 1) + ridge)));
    } else {
      // Redundant: row t = alpha^T (prefix rows), so k_<t = K_<t alpha and
      // K_tt = alpha^T K_<t alpha.
      const VectorXd alpha = gaussian_matrix(rng, t - 1, 1, 1.0 / std::sqrt(double(t)));
      f.row(t - 1) = (f.topRows(t - 1).transpose() * alpha).transpose();
      const MatrixXd k = f * f.transpose();
      const auto trace = cig_rewards(KernelMatrix<double>::from_gram(k, ridge));
      const double e = std::exp(trace.rewards(t - 1));
      const double hi = ridge * (1.0 + alpha.squaredNorm());
      tr.add(std::max({0.0, ridge - e, e - hi}) / ridge);
    }
  }
  // Duplicated step at scale a: exp(r_2) = s + a s / (a + s), which runs from
  // s (a -> 0) to 2 s (a -> inf).
  for (double a : {1e-6, 1e-3, 1.0, 1e3, 1e6}) {
    const double s = 0.5;
    const MatrixXd k = MatrixXd::Constant(2, 2, a);
    const double e = std::exp(cig_rewards(KernelMatrix<double>::from_gram(k, s)).rewards(1));
    tr.add(std::abs(e - (s + a * s / (a + s))) / s);
  }
  return make_report("limiting_cases", tr, 1e-9);
}

OracleReport verify_frontier_inactivity(Index n_instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tracker tr;
  for (Index i = 0; i < n_instances; ++i) {
    const Index t_len = uniform_index(rng, 1, 15);
    const double ridge = log_uniform(rng, -3.0, 0.0);
    MatrixXd f = gaussian_matrix(rng, t_len, uniform_index(rng, 1, 2 * t_len));
    if (i % 3 == 0 && t_len > 1) {
      // Constructed: strongly aligned steps, where the correction is largest.
      const VectorXd base = f.row(0).transpose();
      for (Index j = 1; j < t_len; ++j) f.row(j) = base.transpose() + 0.05 * f.row(j);
    }
    MatrixXd k = f * f.transpose();
    const double target_eps = log_uniform(rng, -3.0, 0.5);
    const double max_diag = k.diagonal().maxCoeff();
    if (max_diag > 0.0) k *= target_eps * ridge / max_diag;
    const double eps = k.diagonal().maxCoeff() / ridge;
    const auto trace = cig_rewards(KernelMatrix<double>::from_gram(k, ridge));
    for (Index t = 0; t < t_len; ++t) {
      const double gap = std::log(k(t, t) + ridge) - trace.rewards(t);
      double err = std::max(0.0, -gap);
      const double x = double(t) * eps * eps;
      if (x < 1.0) err = std::max(err, gap + std::log1p(-x));
      if (x <= 0.5) err = std::max(err, gap - 2.0 * x);
      tr.add(err);
      tr.count--;
    }
    tr.count++;
  }
  return make_report("frontier_inactivity", tr, 1e-9);
}

OracleReport verify_propositions(Index n_instances, std::uint64_t seed) {
  const auto a = verify_monotonicity_concavity(n_instances, mix_seed(seed));
  const auto b = verify_limiting_cases(n_instances, mix_seed(seed + 1));
  const auto c = verify_frontier_inactivity(n_instances, mix_seed(seed + 2));
  OracleReport r;
  r.check_name = "propositions";
  r.instances = a.instances + b.instances + c.instances;
  r.max_abs_error = std::max({a.max_abs_error, b.max_abs_error, c.max_abs_error});
  r.tolerance = 1e-9;
  r.finish();
  r.pass = a.pass && b.pass && c.pass;
  return r;
}

OracleReport verify_kronecker(Index n_instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tracker tr;
  for (Index i = 0; i < n_instances; ++i) {
    const Index t = uniform_index(rng, 1, 8);
    const Index m = uniform_index(rng, 2, 5);
    const double sigma2 = log_uniform(rng, -2.0, 0.5);
    if (i % 2 == 0) {
      // d = 1 through the deviation pipeline.
      const auto dev = compute_deviations(random_predictions(rng, m, t, 1, 1.0));
      MatrixXd c = build_full_covariance_gram(dev, sigma2).materialize();
      c.diagonal().array() += sigma2;
      MatrixXd k = build_kernel(dev, sigma2).ridged();
      tr.add(std::abs(logdet_eigen(c) - logdet_eigen(k)));
      continue;
    }
    const Index d = uniform_index(rng, 2, 5);
    // Scalar deviations per member, expanded to blocks c_jt I_d.
    MatrixXd u = gaussian_matrix(rng, t, m);
    u = u.colwise() - u.rowwise().mean();
    const MatrixXd b = u * u.transpose() / double(m);
    MatrixXd c = MatrixXd::Zero(t * d, t * d);
    for (Index j = 0; j < t; ++j) {
      for (Index l = 0; l < t; ++l) {
        c.block(j * d, l * d, d, d) = b(j, l) * MatrixXd::Identity(d, d);
      }
    }
    MatrixXd k(t, t);
    for (Index j = 0; j < t; ++j) {
      for (Index l = 0; l < t; ++l) k(j, l) = c.block(j * d, l * d, d, d).trace();
    }
    c.diagonal().array() += sigma2;
    k.diagonal().array() += sigma2 * double(d);
    const double rhs = double(d) * logdet_eigen(k) - double(d * t) * std::log(double(d));
    tr.add(std::abs(logdet_eigen(c) - rhs));
  }
  return make_report("kronecker", tr, 1e-9);
}

OracleReport verify_p2e_diagonal(Index n_instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tracker tr;
  for (Index i = 0; i < n_instances; ++i) {
    const Index m = uniform_index(rng, 2, 6);
    const Index t = uniform_index(rng, 1, 20);
    const Index d = uniform_index(rng, 1, 10);
    const auto dev = compute_deviations(random_predictions(rng, m, t, d, log_uniform(rng, -2, 1)));
    const VectorXd p2e = p2e_rewards(dev);
    const VectorXd diag = build_kernel(dev, 0.0).gram().diagonal();
    for (Index s = 0; s < t; ++s) {
      tr.add(std::abs(p2e(s) * double(d) - diag(s)) / std::max(1.0, diag(s)));
      tr.count--;
    }
    tr.count++;
  }
  return make_report("p2e_diagonal", tr, 1e-12);
}

OracleReport verify_gradients(Index n_pairs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tracker tr;
  const double h = 1e-5;
  for (Index i = 0; i < n_pairs; ++i) {
    Mlp net(3, 4, 2, i % 2 == 0, mix_seed(seed + std::uint64_t(i)));
    const MatrixXd x = gaussian_matrix(rng, 3, 4);
    const MatrixXd y = gaussian_matrix(rng, 2, 4);
    VectorXd analytic;
    net.loss_and_gradient(x, y, analytic);
    VectorXd numeric(net.parameter_count());
    for (Index p = 0; p < net.parameter_count(); ++p) {
      const double keep = net.parameters()(p);
      net.parameters()(p) = keep + h;
      const double up = net.loss(x, y);
      net.parameters()(p) = keep - h;
      const double down = net.loss(x, y);
      net.parameters()(p) = keep;
      numeric(p) = (up - down) / (2.0 * h);
    }
    const double denom = std::max({analytic.norm(), numeric.norm(), 1e-300});
    tr.add((analytic - numeric).norm() / denom);
  }
  return make_report("gradients", tr, 1e-4);
}

std::vector<OracleReport> run_oracle_suite(const OracleSuiteOptions& options) {
  const Index div = std::max<Index>(1, options.scale_divisor);
  auto n = [div](Index full) { return std::max<Index>(1, full / div); };
  const std::uint64_t s = options.seed;
  std::vector<std::function<OracleReport()>> checks = {
      [&] { return verify_logdet_decomposition(n(1000), 50, s + 1); },
      [&] { return verify_sylvester(n(1000), s + 2); },
      [&] { return verify_rank_bounds(div > 1 ? 1 : 2, s + 3); },
      [&] { return verify_gaussian_bound(n(50), std::max<Index>(2, options.mc_samples), s + 4); },
      [&] { return verify_monotonicity_concavity(n(10000), s + 5); },
      [&] { return verify_limiting_cases(n(10000), s + 6); },
      [&] { return verify_frontier_inactivity(n(10000), s + 7); },
      [&] { return verify_kronecker(n(1000), s + 9); },
      [&] { return verify_p2e_diagonal(n(1000), s + 10); },
      [&] { return verify_gradients(n(100), s + 11); },
  };
  std::vector<OracleReport> reports(checks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < checks.size();) {
      try {
        reports[i] = checks[i]();
      } catch (const std::exception& e) {
        reports[i].check_name = "check_" + std::to_string(i);
        reports[i].max_abs_error = std::numeric_limits<double>::infinity();
        reports[i].pass = false;
        reports[i].note = e.what();
      }
    }
  };
  Index workers = options.workers > 0 ? options.workers
                                      : Index(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min<Index>(workers, Index(checks.size()));
  std::vector<std::thread> pool;
  for (Index w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return reports;
}

}  // namespace cig
