#include "cig/harness.hpp"

#include "cig/aleatoric.hpp"
#include "cig/baselines.hpp"
#include "cig/kernel.hpp"
#include "cig/reward.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace cig {

namespace {

using boost::property_tree::ptree;
using nlohmann::json;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string where(const std::string& section, const std::string& key) {
  return "[" + section + "] " + key;
}

template <typename T>
T parse_number(const std::string& text, const std::string& section, const std::string& key) {
  const std::string s = trim(text);
  T value{};
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end || s.empty()) {
    throw ValidationError(where(section, key) + ": cannot parse '" + s + "' as a number");
  }
  return value;
}

bool parse_bool(const std::string& text, const std::string& section, const std::string& key) {
  const std::string s = trim(text);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ValidationError(where(section, key) + ": expected true or false, got '" + s + "'");
}

Index parse_index(const std::string& text, const std::string& section, const std::string& key) {
  return Index(parse_number<long long>(text, section, key));
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  for (const auto& item : split_list(text)) {
    const auto dash = item.find('-');
    if (dash != std::string::npos && dash > 0) {
      const auto lo = parse_number<std::uint64_t>(item.substr(0, dash), "experiment", "seeds");
      const auto hi = parse_number<std::uint64_t>(item.substr(dash + 1), "experiment", "seeds");
      if (hi < lo) throw ValidationError("[experiment] seeds: empty range '" + item + "'");
      for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
    } else {
      seeds.push_back(parse_number<std::uint64_t>(item, "experiment", "seeds"));
    }
  }
  return seeds;
}

using Setter = std::function<void(const std::string&)>;

void apply_section(const std::string& section, const ptree& body,
                   const std::map<std::string, Setter>& setters) {
  for (const auto& [key, child] : body) {
    if (!child.empty()) throw ValidationError("[" + section + "]: nested key '" + key + "'");
    const auto it = setters.find(key);
    if (it == setters.end()) throw ValidationError(where(section, key) + ": unknown key");
    it->second(child.data());
  }
}

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json row_json(const LogRow& r) {
  return {{"env_steps", r.env_steps},
          {"coverage", r.coverage},
          {"mean_reward", r.mean_reward},
          {"sigma2", r.sigma2},
          {"mean_lifelong", r.mean_lifelong},
          {"mean_prefix_explained", r.mean_prefix_explained},
          {"episode_entropy", r.episode_entropy}};
}

json config_json(const RunConfig& c) {
  return {{"env",
           {{"kind", to_string(c.env.kind)},
            {"size", c.env.size},
            {"rooms", c.env.rooms},
            {"stay_actions", c.env.stay_actions},
            {"horizon", c.env.effective_horizon()},
            {"noisy_tv", c.env.noisy_tv},
            {"distractor_dims", c.env.distractor_dims},
            {"seed", c.env.seed}}},
          {"ensemble",
           {{"members", c.ensemble.members},
            {"width", c.ensemble.hidden},
            {"residual", c.ensemble.residual},
            {"optimizer", c.ensemble.optimizer == Optimizer::kAdam ? "adam" : "sgd_momentum"},
            {"lr", c.training.lr}}},
          {"reward",
           {{"method", to_string(c.reward.method)},
            {"ridge_multiplier", c.reward.ridge_multiplier},
            {"beta_sigma", c.reward.beta_sigma},
            {"norm_momentum", c.reward.norm_momentum}}},
          {"planner",
           {{"horizon", c.planner.horizon},
            {"candidates", c.planner.candidates},
            {"temperature", c.planner.temperature},
            {"gamma", c.planner.gamma},
            {"action_repeat", c.planner.action_repeat}}},
          {"budget_steps", c.budget_steps},
          {"seed", c.seed}};
}

class JsonlObserver : public RunObserver {
 public:
  explicit JsonlObserver(std::ostream& os) : os_(os) {}
  void on_log(const LogRow& row) override {
    json j = row_json(row);
    j["event"] = "log";
    os_ << j.dump() << '\n';
  }
  void on_episode(const EpisodeSummary& e) override {
    os_ << json{{"event", "episode"},
                {"episode", e.episode},
                {"env_steps", e.env_steps},
                {"coverage", e.coverage},
                {"entropy", e.entropy}}
               .dump()
        << '\n';
  }

 private:
  std::ostream& os_;
};

json optional_json(const std::optional<std::uint64_t>& v) {
  return v ? json(*v) : json(nullptr);
}

json trace_json(const RewardTrace<double>& t) {
  auto vec = [](const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"rewards", vec(t.rewards)},
          {"lifelong", vec(t.lifelong)},
          {"prefix_explained", vec(t.prefix_explained)},
          {"total", t.total()},
          {"ridge", t.ridge}};
}

}  // namespace

void ExperimentConfig::validate() const {
  if (methods.empty()) throw ValidationError("[experiment] methods: at least one method required");
  if (envs.empty()) throw ValidationError("config needs at least one [env.<name>] section");
  if (seeds.empty()) throw ValidationError("[experiment] seeds: at least one seed required");
  if (workers < 1) throw ValidationError("[experiment] workers: must be >= 1");
  if (n_bootstrap < 1) throw ValidationError("[experiment] n_bootstrap: must be >= 1");
  std::set<std::string> names;
  for (const auto& e : envs) {
    if (!names.insert(e.name).second) throw ValidationError("duplicate env '" + e.name + "'");
  }
  std::set<std::uint64_t> unique_seeds(seeds.begin(), seeds.end());
  if (unique_seeds.size() != seeds.size()) throw ValidationError("[experiment] seeds: duplicates");
  for (Method m : methods) {
    for (const auto& e : envs) run_config(m, e, seeds.front()).validate();
  }
}

RunConfig ExperimentConfig::run_config(Method method, const EnvSpec& env,
                                       std::uint64_t seed) const {
  RunConfig c;
  c.env_name = env.name;
  c.env = env.config;
  c.ensemble = ensemble;
  c.reward = reward;
  c.reward.method = method;
  c.planner = planner;
  c.training = training;
  c.seed = seed;
  c.budget_steps = budget_steps;
  c.log_every = log_every;
  c.coverage_threshold = coverage_threshold;
  c.stop_at_coverage = stop_at_coverage;
  return c;
}

ExperimentConfig parse_experiment_config(std::istream& is) {
  // The INI reader only knows ';' comments; drop '#' lines first.
  std::stringstream cleaned;
  for (std::string line; std::getline(is, line);) {
    const std::string t = trim(line);
    cleaned << (t.rfind('#', 0) == 0 ? std::string() : line) << '\n';
  }
  ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(cleaned, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  auto& ex = c;
  auto& en = c.ensemble;
  auto& rw = c.reward;
  auto& pl = c.planner;
  auto& tr = c.training;

  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ValidationError("config: key '" + section + "' outside any section");
    }
    const std::string s = section;
    if (s == "experiment") {
      apply_section(s, body, {
          {"name", [&](const std::string& v) { ex.name = trim(v); }},
          {"methods", [&](const std::string& v) {
             ex.methods.clear();
             for (const auto& m : split_list(v)) ex.methods.push_back(parse_method(m));
           }},
          {"seeds", [&](const std::string& v) { ex.seeds = parse_seeds(v); }},
          {"budget_steps", [&](const std::string& v) { ex.budget_steps = parse_index(v, s, "budget_steps"); }},
          {"log_every", [&](const std::string& v) { ex.log_every = parse_index(v, s, "log_every"); }},
          {"coverage_threshold", [&](const std::string& v) { ex.coverage_threshold = parse_number<double>(v, s, "coverage_threshold"); }},
          {"stop_at_coverage", [&](const std::string& v) { ex.stop_at_coverage = parse_number<double>(v, s, "stop_at_coverage"); }},
          {"workers", [&](const std::string& v) { ex.workers = parse_index(v, s, "workers"); }},
          {"n_bootstrap", [&](const std::string& v) { ex.n_bootstrap = parse_index(v, s, "n_bootstrap"); }},
          {"bootstrap_seed", [&](const std::string& v) { ex.bootstrap_seed = parse_number<std::uint64_t>(v, s, "bootstrap_seed"); }},
      });
    } else if (s.rfind("env.", 0) == 0 && s.size() > 4) {
      EnvSpec spec;
      spec.name = s.substr(4);
      auto& e = spec.config;
      apply_section(s, body, {
          {"kind", [&](const std::string& v) { e.kind = parse_env_kind(trim(v)); }},
          {"size", [&](const std::string& v) { e.size = parse_index(v, s, "size"); }},
          {"rooms", [&](const std::string& v) { e.rooms = parse_index(v, s, "rooms"); }},
          {"stay_actions", [&](const std::string& v) { e.stay_actions = parse_index(v, s, "stay_actions"); }},
          {"horizon", [&](const std::string& v) { e.horizon = parse_index(v, s, "horizon"); }},
          {"noisy_tv", [&](const std::string& v) { e.noisy_tv = parse_bool(v, s, "noisy_tv"); }},
          {"distractor_dims", [&](const std::string& v) { e.distractor_dims = parse_index(v, s, "distractor_dims"); }},
          {"seed", [&](const std::string& v) { e.seed = parse_number<std::uint64_t>(v, s, "seed"); }},
      });
      c.envs.push_back(std::move(spec));
    } else if (s == "ensemble") {
      apply_section(s, body, {
          {"members", [&](const std::string& v) { en.members = parse_index(v, s, "members"); }},
          {"width", [&](const std::string& v) { en.hidden = parse_index(v, s, "width"); }},
          {"residual", [&](const std::string& v) { en.residual = parse_bool(v, s, "residual"); }},
          {"optimizer", [&](const std::string& v) {
             const std::string o = trim(v);
             if (o == "adam") en.optimizer = Optimizer::kAdam;
             else if (o == "sgd_momentum") en.optimizer = Optimizer::kSgdMomentum;
             else throw ValidationError(where(s, "optimizer") + ": expected adam or sgd_momentum, got '" + o + "'");
           }},
          {"momentum", [&](const std::string& v) { en.momentum = parse_number<double>(v, s, "momentum"); }},
          {"lr", [&](const std::string& v) { tr.lr = parse_number<double>(v, s, "lr"); }},
      });
    } else if (s == "reward") {
      apply_section(s, body, {
          {"ridge_multiplier", [&](const std::string& v) { rw.ridge_multiplier = parse_number<double>(v, s, "ridge_multiplier"); }},
          {"beta_sigma", [&](const std::string& v) { rw.beta_sigma = parse_number<double>(v, s, "beta_sigma"); }},
          {"norm_momentum", [&](const std::string& v) { rw.norm_momentum = parse_number<double>(v, s, "norm_momentum"); }},
          {"e3b_lambda", [&](const std::string& v) { rw.e3b_lambda = parse_number<double>(v, s, "e3b_lambda"); }},
          {"apt_k", [&](const std::string& v) { rw.apt_k = parse_index(v, s, "apt_k"); }},
          {"head_hidden", [&](const std::string& v) { rw.head_hidden = parse_index(v, s, "head_hidden"); }},
          {"head_lr", [&](const std::string& v) { rw.head_lr = parse_number<double>(v, s, "head_lr"); }},
      });
    } else if (s == "planner") {
      apply_section(s, body, {
          {"horizon", [&](const std::string& v) { pl.horizon = parse_index(v, s, "horizon"); }},
          {"candidates", [&](const std::string& v) { pl.candidates = parse_index(v, s, "candidates"); }},
          {"temperature", [&](const std::string& v) { pl.temperature = parse_number<double>(v, s, "temperature"); }},
          {"gamma", [&](const std::string& v) { pl.gamma = parse_number<double>(v, s, "gamma"); }},
          {"action_repeat", [&](const std::string& v) { pl.action_repeat = parse_number<double>(v, s, "action_repeat"); }},
      });
    } else if (s == "training") {
      apply_section(s, body, {
          {"prefill", [&](const std::string& v) { tr.prefill = parse_index(v, s, "prefill"); }},
          {"pretrain_steps", [&](const std::string& v) { tr.pretrain_steps = parse_index(v, s, "pretrain_steps"); }},
          {"train_every", [&](const std::string& v) { tr.train_every = parse_index(v, s, "train_every"); }},
          {"gradient_steps", [&](const std::string& v) { tr.gradient_steps = parse_index(v, s, "gradient_steps"); }},
          {"batch_size", [&](const std::string& v) { tr.batch_size = parse_index(v, s, "batch_size"); }},
          {"buffer_capacity", [&](const std::string& v) { tr.buffer_capacity = parse_index(v, s, "buffer_capacity"); }},
      });
    } else {
      throw ValidationError("config: unknown section [" + s + "]");
    }
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  return parse_experiment_config(in);
}

double interquartile_mean(std::vector<double> values) {
  if (values.empty()) throw ValidationError("iqm needs at least one value");
  std::sort(values.begin(), values.end());
  const std::size_t cut = values.size() / 4;
  double sum = 0.0;
  for (std::size_t i = cut; i < values.size() - cut; ++i) sum += values[i];
  return sum / double(values.size() - 2 * cut);
}

IqmResult iqm_ci(const std::vector<double>& values, Index n_bootstrap, std::uint64_t seed) {
  if (values.empty()) throw ValidationError("iqm needs at least one value");
  if (n_bootstrap < 1) throw ValidationError("n_bootstrap must be >= 1");
  for (double v : values) {
    if (!std::isfinite(v)) throw ValidationError("iqm values must be finite");
  }
  IqmResult out;
  out.iqm = interquartile_mean(values);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> stats(static_cast<std::size_t>(n_bootstrap));
  std::vector<double> sample(values.size());
  for (auto& s : stats) {
    for (auto& x : sample) x = values[pick(rng)];
    s = interquartile_mean(sample);
  }
  std::sort(stats.begin(), stats.end());
  // Linear interpolation between order statistics.
  auto quantile = [&](double q) {
    const double pos = q * double(stats.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, stats.size() - 1);
    return stats[lo] + (pos - double(lo)) * (stats[hi] - stats[lo]);
  };
  out.lo = quantile(0.025);
  out.hi = quantile(0.975);
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ValidationError("median needs at least one value");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string make_run_id(Method method, const std::string& env, std::uint64_t seed) {
  return env + "__" + to_string(method) + "__s" + std::to_string(seed);
}

void write_summary_csv(std::ostream& os, const RunRecord& run) {
  os << kSummaryCsvHeader << '\n';
  for (const auto& r : run.result.rows) {
    os << run.run_id << ',' << to_string(run.method) << ',' << run.env << ',' << run.seed << ','
       << r.env_steps << ',' << fmt17(r.coverage) << ',' << fmt17(r.mean_reward) << ','
       << fmt17(r.sigma2) << ',' << fmt17(r.mean_lifelong) << ','
       << fmt17(r.mean_prefix_explained) << ',' << fmt17(r.episode_entropy) << '\n';
  }
}

std::vector<AggregateRow> aggregate_runs(const ExperimentConfig& config,
                                         const std::vector<RunRecord>& runs) {
  std::vector<AggregateRow> rows;
  std::uint64_t stream = 0;
  for (const auto& env : config.envs) {
    for (Method m : config.methods) {
      AggregateRow row;
      row.method = m;
      row.env = env.name;
      std::vector<double> coverage, steps;
      for (const auto& r : runs) {
        if (r.method != m || r.env != env.name) continue;
        ++row.runs;
        if (!r.ok) {
          ++row.failed;
          continue;
        }
        coverage.push_back(r.result.final_coverage);
        if (r.result.steps_to_threshold) ++row.reached_threshold;
        steps.push_back(double(r.result.steps_to_threshold.value_or(std::uint64_t(config.budget_steps))));
      }
      const std::uint64_t seed = mix_seed(config.bootstrap_seed + stream++);
      if (!coverage.empty()) {
        row.final_coverage = iqm_ci(coverage, config.n_bootstrap, seed);
        row.steps_to_threshold = iqm_ci(steps, config.n_bootstrap, mix_seed(seed));
        row.median_steps_to_threshold = median(steps);
      } else {
        const double nan = std::nan("");
        row.final_coverage = {nan, nan, nan};
        row.steps_to_threshold = {nan, nan, nan};
        row.median_steps_to_threshold = nan;
      }
      rows.push_back(row);
    }
  }
  return rows;
}

void write_aggregate_csv(std::ostream& os, const std::vector<AggregateRow>& rows) {
  os << "method,env,runs,failed,final_coverage_iqm,final_coverage_lo,final_coverage_hi,"
        "steps_to_threshold_iqm,steps_to_threshold_lo,steps_to_threshold_hi,"
        "steps_to_threshold_median,reached_threshold\n";
  for (const auto& r : rows) {
    os << to_string(r.method) << ',' << r.env << ',' << r.runs << ',' << r.failed << ','
       << fmt17(r.final_coverage.iqm) << ',' << fmt17(r.final_coverage.lo) << ','
       << fmt17(r.final_coverage.hi) << ',' << fmt17(r.steps_to_threshold.iqm) << ','
       << fmt17(r.steps_to_threshold.lo) << ',' << fmt17(r.steps_to_threshold.hi) << ','
       << fmt17(r.median_steps_to_threshold) << ',' << r.reached_threshold << '\n';
  }
}

MatrixResult run_matrix(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  std::filesystem::create_directories(out_dir);
  MatrixResult out;
  for (const auto& env : config.envs) {
    for (Method m : config.methods) {
      for (auto seed : config.seeds) {
        RunRecord r;
        r.method = m;
        r.env = env.name;
        r.seed = seed;
        r.run_id = make_run_id(m, env.name, seed);
        out.runs.push_back(std::move(r));
      }
    }
  }
  std::vector<const EnvSpec*> env_of;
  for (const auto& r : out.runs) {
    for (const auto& e : config.envs) {
      if (e.name == r.env) env_of.push_back(&e);
    }
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < out.runs.size();) {
      auto& rec = out.runs[i];
      const auto run_cfg = config.run_config(rec.method, *env_of[i], rec.seed);
      std::ofstream events(out_dir / (rec.run_id + ".jsonl"));
      events << json{{"event", "start"}, {"run_id", rec.run_id}, {"config", config_json(run_cfg)}}
                    .dump()
             << '\n';
      try {
        JsonlObserver observer(events);
        rec.result = run_exploration(run_cfg, &observer);
        rec.ok = true;
        events << json{{"event", "end"},
                       {"final_coverage", rec.result.final_coverage},
                       {"env_steps", rec.result.env_steps},
                       {"steps_to_threshold", optional_json(rec.result.steps_to_threshold)},
                       {"terminal_room_first_visit",
                        optional_json(rec.result.terminal_room_first_visit)},
                       {"return_mean", rec.result.return_mean},
                       {"return_stddev", rec.result.return_stddev},
                       {"final_sigma2", rec.result.final_sigma2}}
                      .dump()
               << '\n';
      } catch (const std::exception& e) {
        rec.ok = false;
        rec.error = e.what();
        events << json{{"event", "error"}, {"message", rec.error}}.dump() << '\n';
      }
      std::ofstream csv(out_dir / (rec.run_id + ".csv"));
      write_summary_csv(csv, rec);
    }
  };
  const Index workers = std::min<Index>(config.workers, Index(out.runs.size()));
  std::vector<std::thread> pool;
  for (Index w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  out.aggregate = aggregate_runs(config, out.runs);
  std::ofstream agg(out_dir / "aggregate.csv");
  write_aggregate_csv(agg, out.aggregate);
  return out;
}

Index rewards_from_rollouts(std::istream& in, std::ostream& out) {
  std::string line;
  Index count = 0, line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string at = "line " + std::to_string(line_no) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ValidationError(at + "invalid JSON: " + e.what());
    }
    if (!j.contains("member_predictions")) throw ValidationError(at + "missing member_predictions");
    std::vector<MatrixXd> preds;
    try {
      const auto& mp = j.at("member_predictions");
      if (!mp.is_array()) throw ValidationError(at + "member_predictions must be an array");
      for (const auto& member : mp) {
        const Index t = Index(member.size());
        const Index d = t > 0 ? Index(member.at(0).size()) : 0;
        MatrixXd m(t, d);
        for (Index r = 0; r < t; ++r) {
          const auto& row = member.at(std::size_t(r));
          if (Index(row.size()) != d) throw ValidationError(at + "ragged member_predictions");
          for (Index c = 0; c < d; ++c) m(r, c) = row.at(std::size_t(c)).get<double>();
        }
        preds.push_back(std::move(m));
      }
    } catch (const json::exception& e) {
      throw ValidationError(at + "member_predictions: " + e.what());
    }
    const auto dev = compute_deviations(preds);
    const Index d = dev.dim();
    const double multiplier = j.value("ridge_multiplier", 1.0);
    double sigma2 = 0.0, ridge = 0.0;
    if (j.contains("ridge")) {
      ridge = j.at("ridge").get<double>();
      sigma2 = ridge / (multiplier * double(d));
    } else if (j.contains("sigma2")) {
      sigma2 = j.at("sigma2").get<double>();
      if (!(sigma2 >= 0.0)) throw ValidationError(at + "sigma2 must be >= 0");
      AleatoricEstimate est;
      est.sigma2 = sigma2;
      est.initialized = sigma2 > 0.0;
      ridge = ridge_value(est, d, multiplier);
    } else {
      throw ValidationError(at + "need sigma2 or ridge");
    }
    if (!(ridge > 0.0)) throw ValidationError(at + "ridge must be > 0");
    const auto kernel = build_kernel(dev, ridge);
    const auto full = build_full_covariance_gram(dev, ridge / double(d));
    const auto cig = cig_rewards(kernel);
    json o;
    o["rollout"] = count;
    o["members"] = dev.members();
    o["horizon"] = dev.horizon();
    o["dim"] = d;
    o["sigma2"] = sigma2;
    o["ridge"] = ridge;
    o["cig"] = trace_json(cig);
    o["no_prefix_redundancy"] = trace_json(no_prefix_rewards(kernel));
    o["lifelong_only"] = trace_json(lifelong_only_rewards(kernel));
    o["no_trace_reduction"] = trace_json(no_trace_reduction_rewards_low_rank(full));
    const VectorXd p2e = p2e_rewards(dev);
    o["p2e"] = std::vector<double>(p2e.data(), p2e.data() + p2e.size());
    const auto diag = prefix_diagnostics(cig);
    o["explained_fraction"] = diag.explained_fraction;
    o["spearman_vs_lifelong"] =
        diag.spearman_vs_lifelong ? json(*diag.spearman_vs_lifelong) : json(nullptr);
    out << o.dump() << '\n';
    ++count;
  }
  return count;
}

DemoExample demo_example() {
  // Three members, two output dims. Steps 1 and 2 are orthogonal; step 3 is
  // nearly orthogonal to both; step 4 is 0.8 step 1 + 0.6 step 2 plus a
  // small orthogonal part.
  const double s1[3][2] = {{1.0, 0.0}, {-1.0, 0.0}, {0.0, 0.0}};
  const double s2[3][2] = {{0.0, 1.0}, {0.0, -1.0}, {0.0, 0.0}};
  const double s3[3][2] = {{0.9, 0.1}, {0.9, -0.1}, {-1.8, 0.0}};
  const double s4[3][2] = {{0.8, 0.6}, {-0.8, -0.6}, {0.0, 0.0}};
  DemoExample ex;
  ex.sigma2 = 0.05;
  for (int k = 0; k < 3; ++k) {
    MatrixXd p(4, 2);
    p << s1[k][0], s1[k][1], s2[k][0], s2[k][1], s3[k][0], s3[k][1], s4[k][0] + 0.15 * s3[k][0] / 0.9,
        s4[k][1];
    // A shared offset: members agree on where the state is, not on the deviation.
    p.array() += 0.5;
    ex.member_predictions.push_back(p);
  }
  const auto dev = compute_deviations(ex.member_predictions);
  const double ridge = ex.sigma2 * double(dev.dim());
  const auto kernel = build_kernel(dev, ridge);
  const auto cig = cig_rewards(kernel);
  ex.kernel = kernel.gram();
  ex.ridged = kernel.ridged();
  ex.cholesky = causal_cholesky(ex.ridged).lower;
  ex.cig = cig.rewards;
  ex.no_prefix = no_prefix_rewards(kernel).rewards;
  ex.lifelong = cig.lifelong;
  ex.prefix_explained = cig.prefix_explained;
  return ex;
}

void print_demo(std::ostream& os, const DemoExample& ex) {
  const Eigen::IOFormat fmt(6, 0, "  ", "\n", "    [", "]");
  const auto old = os.flags();
  os << "Four-step rollout, three members, d = 2, sigma2 = " << ex.sigma2
     << ", ridge = sigma2 * d = " << ex.sigma2 * 2 << "\n\n";
  for (std::size_t k = 0; k < ex.member_predictions.size(); ++k) {
    os << "member " << k << " predictions (rows = steps):\n"
       << ex.member_predictions[k].format(fmt) << "\n";
  }
  os << "\nK (traced Gram of deviations):\n" << ex.kernel.format(fmt) << "\n";
  os << "\nK + ridge I:\n" << ex.ridged.format(fmt) << "\n";
  os << "\nL (lower Cholesky factor):\n" << ex.cholesky.format(fmt) << "\n\n";
  os << std::fixed << std::setprecision(6);
  os << "step  K_tt       prefix     r_cig      r_no_prefix  explained_frac\n";
  for (Index t = 0; t < ex.cig.size(); ++t) {
    const double frac = ex.lifelong(t) > 0 ? ex.prefix_explained(t) / ex.lifelong(t) : 0.0;
    os << "  " << t + 1 << "   " << std::setw(9) << ex.lifelong(t) << "  " << std::setw(9)
       << ex.prefix_explained(t) << "  " << std::setw(9) << ex.cig(t) << "  " << std::setw(11)
       << ex.no_prefix(t) << "  " << std::setw(9) << frac << "\n";
  }
  os << "\nsum r_cig = " << ex.cig.sum() << " = log det(K + ridge I)\n";
  os.flags(old);
}

}  // namespace cig
