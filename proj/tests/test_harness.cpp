#include "cig/harness.hpp"

#include "doctest.h"
#include "json.hpp"
#include "test_support.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace cig;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"(
# tiny matrix used by the harness tests
[experiment]
name = tiny
methods = cig
seeds = 7
budget_steps = 120
log_every = 40

[env.chain]
kind = chain
size = 10
noisy_tv = true

[ensemble]
members = 3
width = 8
optimizer = adam
lr = 0.001

[planner]
horizon = 4
candidates = 4

[training]
prefill = 50
pretrain_steps = 5
batch_size = 16
)";

ExperimentConfig parse(const std::string& text) {
  std::istringstream is(text);
  return parse_experiment_config(is);
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("cig_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Keeps x_i iff its position in the sorted order (ties broken by index)
// falls outside the floor(n/4) lowest and highest positions.
double iqm_by_definition(const std::vector<double>& x) {
  const std::size_t n = x.size(), cut = n / 4;
  double sum = 0.0;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t rank = 0;
    for (std::size_t j = 0; j < n; ++j) rank += x[j] < x[i] || (x[j] == x[i] && j < i);
    if (rank >= cut && rank < n - cut) {
      sum += x[i];
      ++kept;
    }
  }
  return sum / double(kept);
}

}  // namespace

TEST_CASE("config: full grammar parses with defaults elsewhere") {
  const auto c = parse(std::string(kTinyConfig) + "[reward]\nridge_multiplier = 2\n");
  CHECK(c.name == "tiny");
  REQUIRE(c.methods.size() == 1);
  CHECK(c.methods[0] == Method::kCig);
  CHECK(c.seeds == std::vector<std::uint64_t>{7});
  REQUIRE(c.envs.size() == 1);
  CHECK(c.envs[0].name == "chain");
  CHECK(c.envs[0].config.kind == EnvKind::kChain);
  CHECK(c.envs[0].config.noisy_tv);
  CHECK(c.ensemble.members == 3);
  CHECK(c.ensemble.optimizer == Optimizer::kAdam);
  CHECK(c.reward.ridge_multiplier == 2.0);
  CHECK(c.reward.beta_sigma == 0.99);
  CHECK(c.planner.gamma == 0.99);
  CHECK(c.training.gradient_steps == 5);
  const auto rc = c.run_config(Method::kP2e, c.envs[0], 3);
  CHECK(rc.reward.method == Method::kP2e);
  CHECK(rc.seed == 3);
}

TEST_CASE("config: seeds lists and ranges") {
  std::string text = kTinyConfig;
  text.replace(text.find("seeds = 7"), 9, "seeds = 1-3, 9");
  CHECK(parse(text).seeds == std::vector<std::uint64_t>{1, 2, 3, 9});
}

TEST_CASE("config: unknown keys, sections and bad values are rejected") {
  auto rejects = [](const std::string& text, const std::string& needle) {
    try {
      parse(text);
      return false;
    } catch (const ValidationError& e) {
      return std::string(e.what()).find(needle) != std::string::npos;
    }
  };
  CHECK(rejects(std::string(kTinyConfig) + "[planner2]\nhorizon = 3\n", "planner2"));
  std::string typo = kTinyConfig;
  typo.replace(typo.find("candidates"), 10, "candidatse");
  CHECK(rejects(typo, "candidatse"));
  std::string bad = kTinyConfig;
  bad.replace(bad.find("width = 8"), 9, "width = 8x");
  CHECK(rejects(bad, "width"));
  std::string bad_method = kTinyConfig;
  bad_method.replace(bad_method.find("methods = cig"), 13, "methods = icm");
  CHECK(rejects(bad_method, "icm"));
  std::string one_member = kTinyConfig;
  one_member.replace(one_member.find("members = 3"), 11, "members = 1");
  CHECK(rejects(one_member, "members"));
  CHECK(rejects("[experiment]\nmethods = cig\nseeds = 1\n", "env"));
}

TEST_CASE("iqm: fixed examples") {
  CHECK(interquartile_mean({1, 2, 3, 4, 100}) == doctest::Approx(3.0));
  CHECK(interquartile_mean({1, 2, 3, 10, 100}) == doctest::Approx(5.0));
  CHECK(interquartile_mean({1, 2, 3}) == 2.0);
  CHECK(interquartile_mean({4.5}) == 4.5);
  CHECK(interquartile_mean({1, 2, 3, 4, 5, 6, 7, 100}) == doctest::Approx(4.5));
  const auto c = iqm_ci({2.5, 2.5, 2.5, 2.5, 2.5}, 500, 1);
  CHECK(c.iqm == 2.5);
  CHECK(c.lo == 2.5);
  CHECK(c.hi == 2.5);
  CHECK_THROWS_AS(iqm_ci({}, 10, 1), ValidationError);
}

TEST_CASE("iqm: matches the trimming definition on random inputs") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-10, 10);
  std::uniform_int_distribution<int> small(0, 3);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + std::size_t(trial % 13);
    std::vector<double> x(n);
    for (auto& v : x) v = trial % 3 == 0 ? double(small(rng)) : u(rng);
    CHECK(interquartile_mean(x) == doctest::Approx(iqm_by_definition(x)).epsilon(1e-12));
  }
}

TEST_CASE("iqm: bootstrap interval is seeded and brackets the data range") {
  const std::vector<double> v{0.2, 0.5, 0.9, 0.4, 0.7};
  const auto a = iqm_ci(v, 2000, 42), b = iqm_ci(v, 2000, 42);
  CHECK(a.lo == b.lo);
  CHECK(a.hi == b.hi);
  CHECK(a.lo <= a.hi);
  CHECK(a.lo >= 0.2);
  CHECK(a.hi <= 0.9);
  CHECK(median({3, 1, 2}) == 2.0);
  CHECK(median({4, 1, 2, 3}) == 2.5);
}

TEST_CASE("run_matrix: one cell writes three files and repeats byte for byte") {
  const auto cfg = parse(kTinyConfig);
  const auto d1 = fresh_dir("a"), d2 = fresh_dir("b");
  const auto r1 = run_matrix(cfg, d1);
  run_matrix(cfg, d2);
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(d1)) ++files;
  CHECK(files == 3);
  REQUIRE(r1.runs.size() == 1);
  CHECK(r1.runs[0].ok);
  const std::string id = r1.runs[0].run_id;
  CHECK(slurp(d1 / (id + ".csv")) == slurp(d2 / (id + ".csv")));
  CHECK(slurp(d1 / "aggregate.csv") == slurp(d2 / "aggregate.csv"));
  CHECK(slurp(d1 / (id + ".jsonl")) == slurp(d2 / (id + ".jsonl")));

  const std::string csv = slurp(d1 / (id + ".csv"));
  CHECK(csv.rfind(kSummaryCsvHeader, 0) == 0);

  // Event log: start, monotone env_steps, end.
  std::ifstream events(d1 / (id + ".jsonl"));
  std::string line;
  std::uint64_t last = 0;
  std::string first_event, last_event;
  while (std::getline(events, line)) {
    const auto j = nlohmann::json::parse(line);
    if (first_event.empty()) first_event = j["event"];
    last_event = j["event"];
    if (j.contains("env_steps")) {
      CHECK(j["env_steps"].get<std::uint64_t>() >= last);
      last = j["env_steps"];
    }
  }
  CHECK(first_event == "start");
  CHECK(last_event == "end");
}

TEST_CASE("run_matrix: aggregate has one row per method and env") {
  std::string text = kTinyConfig;
  text.replace(text.find("methods = cig"), 13, "methods = cig, p2e");
  text.replace(text.find("seeds = 7"), 9, "seeds = 1-2");
  text += "[env.corridor]\nkind = corridor\nsize = 8\n";
  auto cfg = parse(text);
  cfg.workers = 3;
  const auto dir = fresh_dir("agg");
  const auto res = run_matrix(cfg, dir);
  CHECK(res.runs.size() == 8);
  CHECK(res.aggregate.size() == 4);
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++files;
  CHECK(files == 8 * 2 + 1);
  for (const auto& row : res.aggregate) {
    CHECK(row.runs == 2);
    CHECK(row.failed == 0);
    CHECK(row.final_coverage.lo <= row.final_coverage.hi);
  }
}

TEST_CASE("rewards_from_rollouts: CIG total is the log determinant") {
  std::mt19937_64 rng(9);
  const auto preds = cig::testing::random_predictions(rng, 4, 5, 3, 1.0);
  nlohmann::json j;
  for (const auto& p : preds) {
    std::vector<std::vector<double>> rows(std::size_t(p.rows()));
    for (Index t = 0; t < p.rows(); ++t) {
      for (Index c = 0; c < p.cols(); ++c) rows[std::size_t(t)].push_back(p(t, c));
    }
    j["member_predictions"].push_back(rows);
  }
  j["sigma2"] = 0.1;
  std::istringstream in(j.dump() + "\n\n" + j.dump() + "\n");
  std::ostringstream out;
  CHECK(rewards_from_rollouts(in, out) == 2);
  const auto line = out.str().substr(0, out.str().find('\n'));
  const auto o = nlohmann::json::parse(line);
  const auto kernel = build_kernel(compute_deviations(preds), 0.1 * 3);
  const double logdet = cig::testing::logdet_eigen(kernel.ridged());
  CHECK(o["cig"]["total"].get<double>() == doctest::Approx(logdet).epsilon(1e-12));
  CHECK(o["ridge"].get<double>() == doctest::Approx(0.3));
  CHECK(o["p2e"].size() == 5);
  CHECK(o.contains("no_trace_reduction"));

  std::istringstream bad1("{\"sigma2\": 0.1}\n");
  CHECK_THROWS_AS(rewards_from_rollouts(bad1, out), ValidationError);
  std::istringstream bad2("{\"member_predictions\": [[[1,2]],[[1]]], \"sigma2\": 0.1}\n");
  CHECK_THROWS_AS(rewards_from_rollouts(bad2, out), ValidationError);
  std::istringstream bad3("not json\n");
  CHECK_THROWS_AS(rewards_from_rollouts(bad3, out), ValidationError);
}

TEST_CASE("demo: step 3 keeps its bonus, step 4 is discounted") {
  const auto ex = demo_example();
  CHECK(ex.kernel.rows() == 4);
  CHECK(ex.member_predictions.size() == 3);
  const double frac3 = ex.prefix_explained(2) / ex.lifelong(2);
  const double frac4 = ex.prefix_explained(3) / ex.lifelong(3);
  CHECK(frac3 < 0.1);
  CHECK(frac4 > 0.5);
  CHECK(ex.no_prefix(3) - ex.cig(3) > ex.no_prefix(2) - ex.cig(2));
  CHECK(ex.cig.sum() == doctest::Approx(cig::testing::logdet_eigen(ex.ridged)).epsilon(1e-12));
  CHECK((ex.cholesky * ex.cholesky.transpose() - ex.ridged).cwiseAbs().maxCoeff() < 1e-12);
  std::ostringstream os;
  print_demo(os, ex);
  CHECK(os.str().find("L (lower Cholesky factor)") != std::string::npos);
}
