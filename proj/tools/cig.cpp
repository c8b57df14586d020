// Command-line front end: experiment matrices, the oracle suite, rewards for
// dumped rollouts, and the four-step worked example.

#include "cig/harness.hpp"
#include "cig/oracle.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;
constexpr int kOracleFailure = 3;

int cmd_run(const std::string& config_path, const std::string& out_dir, int workers) {
  auto config = cig::load_experiment_config(config_path);
  if (workers > 0) config.workers = workers;
  const std::filesystem::path out = out_dir.empty() ? std::filesystem::path("results") / config.name
                                                    : std::filesystem::path(out_dir);
  const auto result = cig::run_matrix(config, out);
  long long failed = 0;
  for (const auto& r : result.runs) {
    if (!r.ok) {
      ++failed;
      std::cerr << "run " << r.run_id << " failed: " << r.error << '\n';
    }
  }
  std::printf("%-18s %-14s %5s %10s %10s %10s %12s %8s\n", "method", "env", "runs", "cov_iqm",
              "cov_lo", "cov_hi", "t90_median", "reached");
  for (const auto& a : result.aggregate) {
    std::printf("%-18s %-14s %5lld %10.4f %10.4f %10.4f %12.1f %8lld\n",
                cig::to_string(a.method).c_str(), a.env.c_str(), (long long)a.runs,
                a.final_coverage.iqm, a.final_coverage.lo, a.final_coverage.hi,
                a.median_steps_to_threshold, (long long)a.reached_threshold);
  }
  std::printf("wrote %zu runs to %s\n", result.runs.size(), out.string().c_str());
  return failed > 0 ? kRuntime : kOk;
}

int cmd_verify(bool as_json, bool quick, std::uint64_t seed) {
  cig::OracleSuiteOptions opt;
  opt.seed = seed;
  if (quick) {
    opt.scale_divisor = 20;
    opt.mc_samples = 50000;
  }
  const auto reports = cig::run_oracle_suite(opt);
  bool all_pass = true;
  for (const auto& r : reports) all_pass = all_pass && r.pass;
  if (as_json) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : reports) {
      j.push_back({{"check_name", r.check_name},
                   {"instances", r.instances},
                   {"max_abs_error", r.max_abs_error},
                   {"tolerance", r.tolerance},
                   {"pass", r.pass},
                   {"note", r.note}});
    }
    std::cout << j.dump(2) << '\n';
  } else {
    std::printf("%-24s %10s %14s %12s  %s\n", "check", "instances", "max_abs_error", "tolerance",
                "result");
    for (const auto& r : reports) {
      std::printf("%-24s %10lld %14.3e %12.1e  %s%s%s\n", r.check_name.c_str(),
                  (long long)r.instances, r.max_abs_error, r.tolerance, r.pass ? "pass" : "FAIL",
                  r.note.empty() ? "" : "  ", r.note.c_str());
    }
  }
  return all_pass ? kOk : kOracleFailure;
}

int cmd_reward(const std::string& path, const std::string& out_path) {
  std::ifstream in(path);
  if (!in) throw cig::ValidationError("cannot open " + path);
  if (out_path.empty()) {
    cig::rewards_from_rollouts(in, std::cout);
  } else {
    std::ofstream out(out_path);
    if (!out) throw cig::ValidationError("cannot write " + out_path);
    cig::rewards_from_rollouts(in, out);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional information gain exploration rewards"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  int workers = 0;
  auto* run = app.add_subcommand("run", "Run an experiment matrix from a config file");
  run->add_option("config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory (default results/<name>)");
  run->add_option("--workers", workers, "Override the worker count");

  bool as_json = false, quick = false;
  std::uint64_t verify_seed = 0;
  auto* verify = app.add_subcommand("verify", "Run the oracle suite");
  verify->add_flag("--json", as_json, "Machine-readable output");
  verify->add_flag("--quick", quick, "Reduced instance counts");
  verify->add_option("--seed", verify_seed, "Base seed");

  std::string rollout_path, reward_out;
  auto* reward = app.add_subcommand("reward", "CIG and ablation rewards for dumped rollouts");
  reward->add_option("rollouts", rollout_path, "JSONL file of rollouts")->required();
  reward->add_option("--out", reward_out, "Write JSONL here instead of stdout");

  auto* demo = app.add_subcommand("demo", "Print the four-step, three-member worked example");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*run) return cmd_run(config_path, out_dir, workers);
    if (*verify) return cmd_verify(as_json, quick, verify_seed);
    if (*reward) return cmd_reward(rollout_path, reward_out);
    if (*demo) {
      cig::print_demo(std::cout, cig::demo_example());
      return kOk;
    }
  } catch (const cig::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}
