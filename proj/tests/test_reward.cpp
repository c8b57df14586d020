#include "cig/reward.hpp"

#include "doctest.h"
#include "test_support.hpp"

#include <sstream>

using namespace cig;
using cig::testing::Mat;
using cig::testing::Vec;

namespace {

KernelMatrix<double> kernel_of(const Mat& k, double ridge) {
  return KernelMatrix<double>::from_gram(k, ridge);
}

Mat duplicated_kernel(double a) {
  Mat k(2, 2);
  k << a, a, a, a;
  return k;
}

}  // namespace

TEST_CASE("cig_rewards: zero kernel sits on the aleatoric floor") {
  const auto trace = cig_rewards(kernel_of(Mat::Zero(15, 15), 0.7));
  REQUIRE(trace.horizon() == 15);
  for (Index t = 0; t < 15; ++t) CHECK(trace.rewards(t) == doctest::Approx(std::log(0.7)));
}

TEST_CASE("cig_rewards: duplicated step falls to the redundant-step Schur value") {
  for (auto [a, s] : {std::pair{1.0, 1.0}, std::pair{3.0, 0.5}, std::pair{0.01, 2.0}}) {
    const auto k = kernel_of(duplicated_kernel(a), s);
    const auto trace = cig_rewards(k);
    CHECK(trace.rewards(0) == doctest::Approx(std::log(a + s)).epsilon(1e-14));
    const double closed = std::log(s * (2 * a + s) / (a + s));
    // Cross-check by the 2 x 2 determinant ratio.
    const Mat kr = k.ridged();
    const double det_ratio = std::log((kr(0, 0) * kr(1, 1) - kr(0, 1) * kr(1, 0)) / (a + s));
    CHECK(std::abs(trace.rewards(1) - closed) < 1e-14);
    CHECK(std::abs(trace.rewards(1) - det_ratio) < 1e-14);
    CHECK(trace.rewards(1) >= std::log(s) - 1e-12);
    CHECK(trace.rewards(1) <= std::log(2 * s) + 1e-12);
  }
  const auto trace = cig_rewards(kernel_of(duplicated_kernel(2.0), 2.0));
  CHECK(trace.rewards(1) == doctest::Approx(std::log(1.5 * 2.0)).epsilon(1e-14));
}

TEST_CASE("cig_rewards: orthogonal steps keep the full lifelong bonus") {
  Mat k = Mat::Zero(2, 2);
  k(0, 0) = 2.5;
  k(1, 1) = 0.4;
  const auto trace = cig_rewards(kernel_of(k, 0.3));
  CHECK(trace.rewards(0) == doctest::Approx(std::log(2.8)).epsilon(1e-15));
  CHECK(trace.rewards(1) == doctest::Approx(std::log(0.7)).epsilon(1e-15));
}

TEST_CASE("cig_rewards: sum equals an LU log det on random PD kernels") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const Mat k = cig::testing::random_psd(rng, 15);
    const auto kernel = kernel_of(k, 0.05 + 0.1 * (trial % 7));
    const auto trace = cig_rewards(kernel);
    CHECK(std::abs(trace.total() - cig::testing::logdet_lu(kernel.ridged())) <= 1e-9);
  }
}

TEST_CASE("cig_rewards: telescoping over 10^4 random kernels, T <= 50") {
  std::mt19937_64 rng(22);
  std::uniform_int_distribution<int> horizon(1, 50);
  std::uniform_real_distribution<double> ridge(1e-3, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const Mat k = cig::testing::random_psd(rng, horizon(rng), 0.5);
    const auto kernel = kernel_of(k, ridge(rng));
    const auto trace = cig_rewards(kernel);
    worst = std::max(worst, std::abs(trace.total() - cig::testing::logdet_eigen(kernel.ridged())));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("cig_rewards: each pivot matches a direct Schur-complement solve") {
  std::mt19937_64 rng(23);
  const auto kernel = kernel_of(cig::testing::random_psd(rng, 12), 0.2);
  const auto trace = cig_rewards(kernel);
  const Mat kr = kernel.ridged();
  for (Index t = 0; t < 12; ++t) {
    const double schur = cig::testing::schur_by_solve(kr, t);
    CHECK(trace.rewards(t) == doctest::Approx(std::log(schur)).epsilon(1e-10));
    CHECK(trace.prefix_explained(t) ==
          doctest::Approx(kr(t, t) - schur).epsilon(1e-9).scale(kr(t, t)));
  }
  CHECK(trace.prefix_explained(0) == 0.0);
}

TEST_CASE("cig_rewards: causality under truncation is bit-exact") {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 50; ++trial) {
    const auto kernel = kernel_of(cig::testing::random_psd(rng, 15), 0.1);
    const auto full = cig_rewards(kernel);
    for (Index t = 1; t <= 15; ++t) {
      const auto part = cig_rewards(kernel.leading(t));
      for (Index j = 0; j < t; ++j) {
        CHECK(part.rewards(j) == full.rewards(j));
        CHECK(part.prefix_explained(j) == full.prefix_explained(j));
      }
    }
  }
}

TEST_CASE("cig_rewards: reversing step order keeps the total") {
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 100; ++trial) {
    const Mat k = cig::testing::random_psd(rng, 10);
    const Mat reversed = k.reverse();
    const auto a = cig_rewards(kernel_of(k, 0.3));
    const auto b = cig_rewards(kernel_of(reversed, 0.3));
    CHECK(std::abs(a.total() - b.total()) <= 1e-9);
  }
}

TEST_CASE("cig_rewards: invariants of the trace") {
  std::mt19937_64 rng(26);
  for (int trial = 0; trial < 500; ++trial) {
    const double ridge = 0.01 + 0.002 * trial;
    const Mat k = cig::testing::random_psd(rng, 1 + trial % 20, 2.0);
    const auto trace = cig_rewards(kernel_of(k, ridge));
    const auto diag = no_prefix_rewards(kernel_of(k, ridge));
    for (Index t = 0; t < trace.horizon(); ++t) {
      CHECK(trace.prefix_explained(t) >= 0.0);
      CHECK(trace.prefix_explained(t) < k(t, t) + ridge);
      CHECK(trace.rewards(t) >= std::log(ridge) - 1e-9);
      CHECK(trace.rewards(t) <= diag.rewards(t) + 1e-12);
    }
  }
}

TEST_CASE("cig_rewards: zero ridge on a singular kernel reports the pivot") {
  Mat k = Mat::Zero(3, 3);
  k(0, 0) = 1.0;
  try {
    cig_rewards(kernel_of(k, 0.0));
    FAIL("expected CholeskyError");
  } catch (const CholeskyError& e) {
    CHECK(e.pivot() == 1);
  }
}

TEST_CASE("cig_rewards: empty rollout gives an empty trace") {
  const auto trace = cig_rewards(kernel_of(Mat(0, 0), 1.0));
  CHECK(trace.horizon() == 0);
}

TEST_CASE("limiting cases on the rewards") {
  std::mt19937_64 rng(27);
  SUBCASE("zero off-diagonal column gives log(K_tt + ridge) exactly") {
    for (int trial = 0; trial < 100; ++trial) {
      Mat k = cig::testing::random_psd(rng, 8);
      const Index t = trial % 8;
      const double ktt = k(t, t);
      k.row(t).setZero();
      k.col(t).setZero();
      k(t, t) = ktt;
      const auto trace = cig_rewards(kernel_of(k, 0.4));
      CHECK(trace.rewards(t) == std::log(ktt + 0.4));
    }
  }
  SUBCASE("row-span redundancy is sandwiched in [ridge, ridge (1 + |alpha|^2)]") {
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
      const Index t = 1 + trial % 10;
      const Mat prefix = cig::testing::random_psd(rng, t, 1.5);
      Vec alpha(t);
      for (Index i = 0; i < t; ++i) alpha(i) = n(rng);
      Mat k(t + 1, t + 1);
      k.topLeftCorner(t, t) = prefix;
      k.col(t).head(t) = prefix * alpha;
      k.row(t).head(t) = (prefix * alpha).transpose();
      k(t, t) = alpha.dot(prefix * alpha);
      const double ridge = 0.05 + 0.001 * trial;
      const auto trace = cig_rewards(kernel_of(k, ridge));
      const double e = std::exp(trace.rewards(t));
      CHECK(e >= ridge * (1.0 - 1e-9));
      CHECK(e <= ridge * (1.0 + alpha.squaredNorm()) * (1.0 + 1e-9));
    }
  }
}

TEST_CASE("no_prefix_rewards") {
  SUBCASE("diagonal kernel matches cig") {
    Mat k = Vec::LinSpaced(6, 0.1, 3.0).asDiagonal();
    const auto a = cig_rewards(kernel_of(k, 0.2));
    const auto b = no_prefix_rewards(kernel_of(k, 0.2));
    CHECK((a.rewards - b.rewards).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("duplicated step keeps log(a + s), gap is log((a+s)^2 / (s (2a+s)))") {
    const double a = 1.7, s = 0.3;
    const auto cig = cig_rewards(kernel_of(duplicated_kernel(a), s));
    const auto diag = no_prefix_rewards(kernel_of(duplicated_kernel(a), s));
    CHECK(diag.rewards(1) == doctest::Approx(std::log(a + s)));
    CHECK(diag.rewards(1) >= cig.rewards(1));
    CHECK(diag.rewards(1) - cig.rewards(1) ==
          doctest::Approx(std::log((a + s) * (a + s) / (s * (2 * a + s)))).epsilon(1e-12));
  }
  SUBCASE("zero kernel") {
    const auto trace = no_prefix_rewards(kernel_of(Mat::Zero(4, 4), 0.9));
    for (Index t = 0; t < 4; ++t) CHECK(trace.rewards(t) == doctest::Approx(std::log(0.9)));
    CHECK(trace.prefix_explained.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("lifelong_only_rewards") {
  CHECK(lifelong_only_rewards(kernel_of(Mat::Identity(5, 5), 0.1)).rewards.cwiseAbs().maxCoeff() ==
        0.0);
  const double e2 = std::exp(2.0);
  const auto trace = lifelong_only_rewards(kernel_of(e2 * Mat::Identity(3, 3), 0.1));
  for (Index t = 0; t < 3; ++t) CHECK(trace.rewards(t) == doctest::Approx(2.0));

  Mat k = Mat::Identity(3, 3);
  k(2, 2) = 0.0;
  try {
    lifelong_only_rewards(kernel_of(k, 0.1));
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("step 2") != std::string::npos);
  }

  // Ranks of log K_tt and log(K_tt + s) coincide within every rollout.
  std::mt19937_64 rng(28);
  for (int trial = 0; trial < 200; ++trial) {
    const Mat kk = cig::testing::random_psd(rng, 15) + 1e-6 * Mat::Identity(15, 15);
    const auto a = lifelong_only_rewards(kernel_of(kk, 0.5));
    const auto b = no_prefix_rewards(kernel_of(kk, 0.5));
    std::vector<double> ra(a.rewards.data(), a.rewards.data() + 15);
    std::vector<double> rb(b.rewards.data(), b.rewards.data() + 15);
    CHECK(spearman(ra, rb).value() == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("prefix_diagnostics") {
  SUBCASE("diagonal kernel") {
    Mat k = Vec::LinSpaced(5, 0.5, 2.5).asDiagonal();
    const auto diag = prefix_diagnostics(cig_rewards(kernel_of(k, 0.1)));
    for (double f : diag.explained_fraction) CHECK(f == 0.0);
    REQUIRE(diag.spearman_vs_lifelong.has_value());
    CHECK(*diag.spearman_vs_lifelong == doctest::Approx(1.0));
  }
  SUBCASE("duplicated step explains a / (a + s) of its disagreement") {
    const double a = 2.0, s = 0.5;
    const auto diag = prefix_diagnostics(cig_rewards(kernel_of(duplicated_kernel(a), s)));
    CHECK(diag.explained_fraction[0] == 0.0);
    CHECK(diag.explained_fraction[1] == doctest::Approx(a * a / ((a + s) * a)).epsilon(1e-14));
  }
  SUBCASE("single step has no rank correlation") {
    const auto diag = prefix_diagnostics(cig_rewards(kernel_of(Mat::Ones(1, 1), 0.1)));
    CHECK_FALSE(diag.spearman_vs_lifelong.has_value());
  }
  SUBCASE("only defined for CIG traces") {
    CHECK_THROWS_AS(prefix_diagnostics(no_prefix_rewards(kernel_of(Mat::Ones(1, 1), 0.1))),
                    ValidationError);
  }
}

TEST_CASE("frontier inactivity bound over 10^4 random kernels") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int checked = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const Index T = 2 + trial % 14;
    Mat k = cig::testing::random_psd(rng, T);
    const double ridge = 1.0;
    // Scale so that max_t K_tt / ridge = eps.
    const double eps = 0.01 + 0.6 * unit(rng);
    k *= eps * ridge / k.diagonal().maxCoeff();
    const auto kernel = kernel_of(k, ridge);
    const auto cig = cig_rewards(kernel);
    const auto diag = no_prefix_rewards(kernel);
    for (Index t = 0; t < T; ++t) {
      const double gap = diag.rewards(t) - cig.rewards(t);
      CHECK(gap >= -1e-12);
      const double x = double(t) * eps * eps;
      if (x < 1.0) {
        CHECK(gap <= -std::log(1.0 - x) + 1e-12);
        ++checked;
      }
      if (x <= 0.5) CHECK(gap <= 2.0 * x + 1e-12);
    }
  }
  CHECK(checked > 10000);
}

TEST_CASE("surrogate is monotone and concave in the PSD order") {
  std::mt19937_64 rng(30);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto objective = [](const Mat& k, double ridge) {
    return cig_rewards(KernelMatrix<double>::from_gram(k, ridge)).total();
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const Index T = 1 + trial % 12;
    const Mat k = cig::testing::random_psd(rng, T);
    const Vec v = cig::testing::random_matrix(rng, T, 1);
    CHECK(objective(k + v * v.transpose(), 0.3) >= objective(k, 0.3) - 1e-12);

    const Mat k2 = cig::testing::random_psd(rng, T);
    const double lambda = unit(rng);
    const double mixed = objective(lambda * k + (1 - lambda) * k2, 0.3);
    CHECK(mixed >= lambda * objective(k, 0.3) + (1 - lambda) * objective(k2, 0.3) - 1e-9);
  }
}

TEST_CASE("no_trace_reduction_rewards") {
  std::mt19937_64 rng(31);
  SUBCASE("zero covariance gives zero rewards after constant removal") {
    const Mat p = Mat::Ones(4, 3);
    const auto full = build_full_covariance_gram(compute_deviations<double>({p, p, p}), 0.2);
    const auto trace = no_trace_reduction_rewards(full, 4);
    CHECK(trace.rewards.cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("M = 2 saturates at a single eigenvalue") {
    for (int T : {1, 3, 10, 25}) {
      const auto dev = compute_deviations(cig::testing::random_predictions(rng, 2, T, 3));
      const double sigma2 = 0.4;
      const auto trace =
          no_trace_reduction_rewards(build_full_covariance_gram(dev, sigma2), T);
      // C = d_1 d_1^T with d_2 = -d_1, so its only eigenvalue is |d_1|^2.
      const double lambda = dev.stacked(0).squaredNorm();
      CHECK(std::abs(trace.total() - std::log(1.0 + lambda / sigma2)) <= 1e-9);
    }
  }
  SUBCASE("sum plus the removed constant is the dense log det; low-rank route agrees") {
    for (int trial = 0; trial < 50; ++trial) {
      const auto dev = compute_deviations(cig::testing::random_predictions(rng, 5, 3, 2));
      const double sigma2 = 0.25;
      const auto full = build_full_covariance_gram(dev, sigma2);
      const auto trace = no_trace_reduction_rewards(full, 3);
      Mat dense = full.materialize();
      dense.diagonal().array() += sigma2;
      CHECK(std::abs(trace.total() + 6 * std::log(sigma2) - cig::testing::logdet_eigen(dense)) <=
            1e-9);
      Mat small = full.gram();
      small.diagonal().array() += sigma2;
      const double sylvester = (6 - 5) * std::log(sigma2) + cig::testing::logdet_eigen(small);
      CHECK(std::abs(trace.total() + 6 * std::log(sigma2) - sylvester) <= 1e-9);
      const auto fast = no_trace_reduction_rewards_low_rank(full);
      CHECK((fast.rewards - trace.rewards).cwiseAbs().maxCoeff() <= 1e-9);
      CHECK((fast.lifelong - trace.lifelong).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
  SUBCASE("horizon mismatch and cap") {
    const auto dev = compute_deviations(cig::testing::random_predictions(rng, 2, 3, 2));
    CHECK_THROWS_AS(no_trace_reduction_rewards(build_full_covariance_gram(dev, 1.0), 4),
                    ValidationError);
    const Mat big = Mat::Zero(2, 2100);
    const auto capped = build_full_covariance_gram(compute_deviations<double>({big, big}), 1.0);
    CHECK_THROWS_AS(no_trace_reduction_rewards(capped, 2), ValidationError);
  }
}

TEST_CASE("normalize_rewards") {
  SUBCASE("constant first batch maps to zero") {
    const std::vector<double> raw(8, 3.5);
    const auto [out, state] = normalize_rewards(raw, NormalizerState{});
    for (double v : out) CHECK(v == 0.0);
    CHECK(state.mean == 3.5);
    CHECK(state.initialized);
  }
  SUBCASE("constant stream converges to zero") {
    NormalizerState state;
    std::vector<double> out;
    std::tie(out, state) = normalize_rewards(std::vector<double>{0.0, 10.0}, state);
    for (int i = 0; i < 2000; ++i) {
      std::tie(out, state) = normalize_rewards(std::vector<double>(4, 2.0), state);
    }
    for (double v : out) CHECK(std::abs(v) < 1e-3);
  }
  SUBCASE("two batches match hand EMA arithmetic") {
    const std::vector<double> first{1.0, 3.0};   // mean 2, var 1
    const std::vector<double> second{4.0, 8.0};  // mean 6, var 4
    NormalizerState state;
    std::vector<double> out;
    std::tie(out, state) = normalize_rewards(first, state);
    CHECK(out[0] == doctest::Approx(-1.0));
    CHECK(out[1] == doctest::Approx(1.0));
    std::tie(out, state) = normalize_rewards(second, state);
    const double mean = 0.99 * 2.0 + 0.01 * 6.0;
    const double var = 0.99 * 1.0 + 0.01 * 4.0;
    CHECK(state.mean == doctest::Approx(mean));
    CHECK(state.variance == doctest::Approx(var));
    CHECK(out[0] == doctest::Approx((4.0 - mean) / std::sqrt(var)));
    CHECK(out[1] == doctest::Approx((8.0 - mean) / std::sqrt(var)));
  }
}

TEST_CASE("RewardTrace JSON lines") {
  Mat k = Mat::Zero(2, 2);
  k(0, 0) = 1.0;
  std::ostringstream os;
  write_trace_jsonl(os, cig_rewards(kernel_of(k, 1.0)));
  const std::string s = os.str();
  CHECK(s.find("{\"step\":1,\"reward\":0.69314718055994529,\"lifelong\":1,") == 0);
  CHECK(s.find("\"variant\":\"cig\",\"ridge\":1}\n{\"step\":2") != std::string::npos);
}
