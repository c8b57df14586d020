#include "cig/planner.hpp"

#include "cig/stats.hpp"

#include <algorithm>
#include <cmath>
#include <span>

namespace cig {

namespace {

const std::vector<std::pair<Method, std::string>>& method_names() {
  static const std::vector<std::pair<Method, std::string>> names = {
      {Method::kCig, "cig"},
      {Method::kCigNoPrefix, "cig_no_prefix"},
      {Method::kCigLifelongOnly, "cig_lifelong_only"},
      {Method::kCigNoTrace, "cig_no_trace"},
      {Method::kP2e, "p2e"},
      {Method::kE3b, "e3b"},
      {Method::kE3bXP2e, "e3b_x_p2e"},
      {Method::kApt, "apt"},
      {Method::kRndLike, "rnd_like"},
  };
  return names;
}

}  // namespace

std::string to_string(Method method) {
  for (const auto& [m, name] : method_names()) {
    if (m == method) return name;
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (const auto& [m, n] : method_names()) {
    if (n == name) return m;
  }
  std::string known;
  for (const auto& [m, n] : method_names()) known += (known.empty() ? "" : ", ") + n;
  throw ValidationError("method: unknown value '" + name + "' (expected one of " + known + ")");
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods = [] {
    std::vector<Method> out;
    for (const auto& [m, n] : method_names()) out.push_back(m);
    return out;
  }();
  return methods;
}

bool uses_novelty_head(Method method) {
  return method == Method::kApt || method == Method::kRndLike;
}

ReplayBuffer::ReplayBuffer(Index capacity, Index state_dim, Index action_dim) {
  if (capacity < 1) throw ValidationError("replay buffer capacity must be >= 1");
  states_.resize(capacity, state_dim);
  actions_.resize(capacity, action_dim);
  next_.resize(capacity, state_dim);
}

Index ReplayBuffer::physical(Index i) const {
  if (i < 0 || i >= size_) {
    throw ValidationError("replay index " + std::to_string(i) + " outside [0, " +
                          std::to_string(size_) + ")");
  }
  const Index cap = capacity();
  const Index oldest = size_ < cap ? 0 : Index(inserted_ % std::uint64_t(cap));
  return (oldest + i) % cap;
}

void ReplayBuffer::add(const VectorXd& state, const VectorXd& action, const VectorXd& next_state) {
  if (state.size() != states_.cols() || action.size() != actions_.cols() ||
      next_state.size() != next_.cols()) {
    throw ValidationError("replay transition dims do not match the buffer");
  }
  const Index slot = Index(inserted_ % std::uint64_t(capacity()));
  states_.row(slot) = state.transpose();
  actions_.row(slot) = action.transpose();
  next_.row(slot) = next_state.transpose();
  ++inserted_;
  size_ = std::min<Index>(size_ + 1, capacity());
}

TransitionBatch ReplayBuffer::sample(Index batch, std::mt19937_64& rng) const {
  if (size_ == 0) throw ValidationError("cannot sample from an empty replay buffer");
  const Index b = std::min(batch, size_);
  // Floyd's algorithm: b distinct indices from [0, size_).
  std::vector<Index> chosen;
  chosen.reserve(static_cast<std::size_t>(b));
  for (Index j = size_ - b; j < size_; ++j) {
    std::uniform_int_distribution<Index> pick(0, j);
    const Index t = pick(rng);
    if (std::find(chosen.begin(), chosen.end(), t) == chosen.end()) {
      chosen.push_back(t);
    } else {
      chosen.push_back(j);
    }
  }
  TransitionBatch out;
  out.states.resize(b, states_.cols());
  out.actions.resize(b, actions_.cols());
  out.next_states.resize(b, next_.cols());
  for (Index i = 0; i < b; ++i) {
    const Index p = physical(chosen[static_cast<std::size_t>(i)]);
    out.states.row(i) = states_.row(p);
    out.actions.row(i) = actions_.row(p);
    out.next_states.row(i) = next_.row(p);
  }
  return out;
}

std::vector<ImaginedRollout> imagine_batch(const EnsembleModel& model, const VectorXd& start,
                                           const std::vector<std::vector<Index>>& actions,
                                           Index action_count) {
  const Index ds = model.state_dim();
  if (model.output_dim() != ds) {
    throw ValidationError("imagination needs output_dim == state_dim");
  }
  if (model.action_dim() != action_count) {
    throw ValidationError("model action_dim " + std::to_string(model.action_dim()) +
                          " differs from action count " + std::to_string(action_count));
  }
  if (start.size() != ds) {
    throw ValidationError("start state has dim " + std::to_string(start.size()) + ", expected " +
                          std::to_string(ds));
  }
  const Index n = static_cast<Index>(actions.size());
  if (n == 0) return {};
  const Index horizon = static_cast<Index>(actions.front().size());
  if (horizon < 1) throw ValidationError("imagination horizon must be >= 1");
  for (const auto& seq : actions) {
    if (static_cast<Index>(seq.size()) != horizon) {
      throw ValidationError("candidate action sequences differ in length");
    }
    for (Index a : seq) {
      if (a < 0 || a >= action_count) {
        throw ValidationError("action " + std::to_string(a) + " outside [0, " +
                              std::to_string(action_count) + ")");
      }
    }
  }

  const Index m = model.members();
  std::vector<ImaginedRollout> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    auto& r = out[static_cast<std::size_t>(i)];
    r.start_state = start;
    r.actions = actions[static_cast<std::size_t>(i)];
    r.states.resize(horizon + 1, ds);
    r.states.row(0) = start.transpose();
    r.member_predictions.assign(static_cast<std::size_t>(m), MatrixXd(horizon, ds));
  }
  std::vector<Index> length(static_cast<std::size_t>(n), horizon);
  std::vector<bool> alive(static_cast<std::size_t>(n), true);

  MatrixXd inputs = MatrixXd::Zero(ds + action_count, n);
  for (Index i = 0; i < n; ++i) inputs.col(i).head(ds) = start;
  std::vector<MatrixXd> preds;
  for (Index t = 0; t < horizon; ++t) {
    inputs.bottomRows(action_count).setZero();
    for (Index i = 0; i < n; ++i) {
      inputs(ds + actions[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)], i) = 1.0;
    }
    model.predict_columns(inputs, preds);
    MatrixXd mean = preds[0];
    for (Index k = 1; k < m; ++k) mean += preds[static_cast<std::size_t>(k)];
    mean /= double(m);
    for (Index i = 0; i < n; ++i) {
      if (!alive[static_cast<std::size_t>(i)]) continue;
      bool finite = true;
      for (Index k = 0; k < m; ++k) finite = finite && preds[static_cast<std::size_t>(k)].col(i).allFinite();
      const double norm = mean.col(i).norm();
      auto& r = out[static_cast<std::size_t>(i)];
      if (!finite || !(norm <= kDivergenceNorm)) {
        alive[static_cast<std::size_t>(i)] = false;
        length[static_cast<std::size_t>(i)] = t;
        r.truncated = true;
        inputs.col(i).head(ds) = start;
        continue;
      }
      for (Index k = 0; k < m; ++k) {
        r.member_predictions[static_cast<std::size_t>(k)].row(t) =
            preds[static_cast<std::size_t>(k)].col(i).transpose();
      }
      r.states.row(t + 1) = mean.col(i).transpose();
      inputs.col(i).head(ds) = mean.col(i);
    }
  }
  for (Index i = 0; i < n; ++i) {
    auto& r = out[static_cast<std::size_t>(i)];
    const Index len = length[static_cast<std::size_t>(i)];
    if (len < horizon) {
      r.states.conservativeResize(len + 1, Eigen::NoChange);
      for (auto& p : r.member_predictions) p.conservativeResize(len, Eigen::NoChange);
    }
  }
  return out;
}

ImaginedRollout imagine(const EnsembleModel& model, const VectorXd& start,
                        const std::vector<Index>& actions, Index action_count) {
  return std::move(imagine_batch(model, start, {actions}, action_count).front());
}

ImaginedRollout imagine(const EnsembleModel& model, const VectorXd& start,
                        const std::function<Index(Index, const VectorXd&)>& policy, Index horizon,
                        Index action_count) {
  if (horizon < 1) throw ValidationError("imagination horizon must be >= 1");
  // Step one action at a time so the policy can react to the imagined state;
  // each prefix is re-imagined, which keeps the result identical to the
  // batched path for the final action sequence.
  std::vector<Index> actions;
  VectorXd state = start;
  for (Index t = 0; t < horizon; ++t) {
    actions.push_back(policy(t, state));
    const auto partial = imagine(model, start, actions, action_count);
    if (partial.truncated) return partial;
    state = partial.states.row(t + 1).transpose();
  }
  return imagine(model, start, actions, action_count);
}

Index select_index(const std::vector<double>& scores, double temperature, std::mt19937_64& rng) {
  if (scores.empty()) throw ValidationError("select_index needs at least one candidate");
  if (!(temperature >= 0.0)) throw ValidationError("temperature must be >= 0");
  const auto best = std::max_element(scores.begin(), scores.end());
  if (temperature == 0.0) return static_cast<Index>(best - scores.begin());
  std::vector<double> weight(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    weight[i] = std::exp((scores[i] - *best) / temperature);
    total += weight[i];
  }
  std::uniform_real_distribution<double> u(0.0, total);
  const double x = u(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < weight.size(); ++i) {
    acc += weight[i];
    if (x < acc) return static_cast<Index>(i);
  }
  return static_cast<Index>(weight.size() - 1);
}

VectorXd rollout_rewards(const ImaginedRollout& rollout, const RewardSettings& settings,
                         const RewardContext& context, Index action_count) {
  const Index len = rollout.length();
  if (len == 0) return VectorXd();
  const Index d = rollout.states.cols();
  const double ridge = ridge_value(context.sigma, d, settings.ridge_multiplier);

  if (uses_novelty_head(settings.method)) {
    if (context.head == nullptr) throw ValidationError("method needs a novelty head");
    MatrixXd inputs = MatrixXd::Zero(d + action_count, len);
    for (Index t = 0; t < len; ++t) {
      inputs.col(t).head(d) = rollout.states.row(t).transpose();
      inputs(d + rollout.actions[static_cast<std::size_t>(t)], t) = 1.0;
    }
    return context.head->predict(inputs);
  }
  if (settings.method == Method::kE3b) {
    return e3b_rollout_rewards(rollout.states.bottomRows(len), settings.e3b_lambda);
  }

  const auto dev = compute_deviations(rollout.member_predictions);
  switch (settings.method) {
    case Method::kCig: return cig_rewards(build_kernel(dev, ridge)).rewards;
    case Method::kCigNoPrefix: return no_prefix_rewards(build_kernel(dev, ridge)).rewards;
    case Method::kCigLifelongOnly: return lifelong_only_rewards(build_kernel(dev, ridge)).rewards;
    case Method::kCigNoTrace:
      return no_trace_reduction_rewards_low_rank(build_full_covariance_gram(dev, ridge / double(d)))
          .rewards;
    case Method::kP2e: return p2e_rewards(dev);
    case Method::kE3bXP2e: {
      const VectorXd e3b = e3b_rollout_rewards(rollout.states.bottomRows(len), settings.e3b_lambda);
      const VectorXd p2e = p2e_rewards(dev);
      VectorXd r(len);
      for (Index t = 0; t < len; ++t) r(t) = e3b_x_p2e_reward(e3b(t), p2e(t));
      return r;
    }
    default: break;
  }
  throw ValidationError("unhandled method " + to_string(settings.method));
}

Planner::Planner(PlannerSettings settings, RewardSettings reward, Index action_count,
                 std::uint64_t seed)
    : settings_(settings), reward_(reward), action_count_(action_count), rng_(seed) {
  if (settings_.candidates < 1) throw ValidationError("planner candidates must be >= 1");
  if (settings_.horizon < 1) throw ValidationError("planner horizon must be >= 1");
  if (!(settings_.temperature >= 0.0)) throw ValidationError("planner temperature must be >= 0");
  if (!(settings_.action_repeat >= 0.0 && settings_.action_repeat < 1.0)) {
    throw ValidationError("planner action_repeat must be in [0, 1)");
  }
  if (action_count_ < 1) throw ValidationError("planner needs at least one action");
  normalizer_.momentum = reward_.norm_momentum;
}

std::vector<double> Planner::score(const std::vector<VectorXd>& raw_rewards) {
  std::vector<double> flat;
  for (const auto& r : raw_rewards) flat.insert(flat.end(), r.data(), r.data() + r.size());
  auto [normalized, state] = normalize_rewards(flat, normalizer_);
  normalizer_ = state;
  std::vector<double> scores(raw_rewards.size(), 0.0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < raw_rewards.size(); ++i) {
    double discount = 1.0, total = 0.0;
    for (Index t = 0; t < raw_rewards[i].size(); ++t) {
      total += discount * normalized[offset++];
      discount *= settings_.gamma;
    }
    scores[i] = total;
  }
  return scores;
}

std::vector<std::vector<Index>> Planner::sample_candidates() {
  std::uniform_int_distribution<Index> pick(0, action_count_ - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<std::vector<Index>> candidates(static_cast<std::size_t>(settings_.candidates));
  for (auto& seq : candidates) {
    seq.resize(static_cast<std::size_t>(settings_.horizon));
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const bool repeat = t > 0 && settings_.action_repeat > 0.0 && coin(rng_) < settings_.action_repeat;
      seq[t] = repeat ? seq[t - 1] : pick(rng_);
    }
  }
  return candidates;
}

Planner::Decision Planner::plan(const EnsembleModel& model, const VectorXd& state,
                                const RewardContext& context) {
  const auto candidates = sample_candidates();
  auto rollouts = imagine_batch(model, state, candidates, action_count_);
  std::vector<VectorXd> raw;
  raw.reserve(rollouts.size());
  for (const auto& r : rollouts) raw.push_back(rollout_rewards(r, reward_, context, action_count_));

  Decision out;
  out.scores = score(raw);
  out.candidate = select_index(out.scores, settings_.temperature, rng_);
  out.action = candidates[static_cast<std::size_t>(out.candidate)].front();
  out.rollout = std::move(rollouts[static_cast<std::size_t>(out.candidate)]);
  out.raw_rewards = std::move(raw[static_cast<std::size_t>(out.candidate)]);
  return out;
}

void RunConfig::validate() const {
  env.validate();
  if (ensemble.members < 2) throw ValidationError("ensemble members: must be >= 2");
  if (ensemble.hidden < 1) throw ValidationError("ensemble width: must be >= 1");
  if (planner.horizon < 1) throw ValidationError("planner horizon: must be >= 1");
  if (planner.candidates < 1) throw ValidationError("planner candidates: must be >= 1");
  if (!(planner.temperature >= 0.0)) throw ValidationError("planner temperature: must be >= 0");
  if (!(planner.gamma > 0.0 && planner.gamma <= 1.0)) {
    throw ValidationError("planner gamma: must be in (0, 1]");
  }
  if (!(reward.ridge_multiplier > 0.0)) throw ValidationError("reward ridge_multiplier: must be > 0");
  if (!(reward.beta_sigma >= 0.0 && reward.beta_sigma < 1.0)) {
    throw ValidationError("reward beta_sigma: must be in [0, 1)");
  }
  if (!(reward.norm_momentum >= 0.0 && reward.norm_momentum < 1.0)) {
    throw ValidationError("reward norm_momentum: must be in [0, 1)");
  }
  if (!(reward.e3b_lambda > 0.0)) throw ValidationError("reward e3b_lambda: must be > 0");
  if (reward.apt_k < 1) throw ValidationError("reward apt_k: must be >= 1");
  if (reward.method == Method::kApt && training.batch_size <= reward.apt_k) {
    throw ValidationError("training batch_size: must exceed reward apt_k for apt");
  }
  if (training.prefill < 1) throw ValidationError("training prefill: must be >= 1");
  if (training.train_every < 1) throw ValidationError("training train_every: must be >= 1");
  if (training.gradient_steps < 0) throw ValidationError("training gradient_steps: must be >= 0");
  if (training.pretrain_steps < 0) throw ValidationError("training pretrain_steps: must be >= 0");
  if (training.batch_size < 1) throw ValidationError("training batch_size: must be >= 1");
  if (training.buffer_capacity < 1) throw ValidationError("training buffer_capacity: must be >= 1");
  if (!(training.lr >= 0.0)) throw ValidationError("ensemble lr: must be >= 0");
  if (budget_steps < 0) throw ValidationError("budget_steps: must be >= 0");
  if (log_every < 1) throw ValidationError("log_every: must be >= 1");
  if (!(coverage_threshold > 0.0 && coverage_threshold <= 1.0)) {
    throw ValidationError("coverage_threshold: must be in (0, 1]");
  }
  if (!(stop_at_coverage >= 0.0 && stop_at_coverage <= 1.0)) {
    throw ValidationError("stop_at_coverage: must be in [0, 1]");
  }
}

namespace {

struct WindowStats {
  double reward_sum = 0.0;
  std::size_t reward_count = 0;
  double lifelong_sum = 0.0;
  double explained_sum = 0.0;
  std::size_t diag_count = 0;

  void clear() { *this = WindowStats{}; }
};

}  // namespace

RunResult run_exploration(const RunConfig& config, RunObserver* observer) {
  config.validate();
  EnvConfig env_cfg = config.env;
  env_cfg.seed = mix_seed(config.env.seed ^ mix_seed(config.seed));
  Environment env(env_cfg);

  EnsembleConfig ens_cfg = config.ensemble;
  ens_cfg.state_dim = env.feature_dim();
  ens_cfg.action_dim = env.action_count();
  ens_cfg.output_dim = env.feature_dim();
  ens_cfg.seed = mix_seed(config.seed + 0x51ED);
  EnsembleModel model(ens_cfg);

  const Index d = env.feature_dim();
  const Index na = env.action_count();
  ReplayBuffer buffer(std::min<Index>(config.training.buffer_capacity,
                                      std::max<Index>(config.budget_steps, 1)),
                      d, na);
  Planner planner(config.planner, config.reward, na, mix_seed(config.seed + 0xA11CE));
  std::mt19937_64 rng(mix_seed(config.seed + 0xB0B));

  AleatoricEstimate sigma;
  sigma.beta = config.reward.beta_sigma;
  std::optional<NoveltyHead> head;
  std::optional<RndLike> rnd;
  if (uses_novelty_head(config.reward.method)) {
    head.emplace(d + na, config.reward.head_hidden, mix_seed(config.seed + 0x4EAD));
    if (config.reward.method == Method::kRndLike) {
      rnd.emplace(d, config.reward.head_hidden, 16, mix_seed(config.seed + 0x4D));
    }
  }

  RunResult result;
  Welford returns;
  WindowStats window;
  double last_entropy = 0.0;
  bool have_entropy = false;
  Index episode = 0;
  const Index terminal_room = env_cfg.kind == EnvKind::kMultiroom ? env_cfg.rooms - 1 : -1;

  const auto train = [&](Index updates) {
    for (Index g = 0; g < updates; ++g) {
      const auto batch = buffer.sample(config.training.batch_size, rng);
      model.train_step(batch, config.training.lr);
      const auto residuals = model.mean_residuals(batch);
      sigma = update_sigma(sigma, residuals);
      if (head) {
        VectorXd targets;
        if (rnd) {
          rnd->train(batch.next_states, config.reward.head_lr);
          targets = rnd->rewards(batch.next_states);
        } else {
          targets = apt_reward(batch.next_states, config.reward.apt_k);
        }
        MatrixXd inputs(d + na, batch.size());
        inputs.topRows(d) = batch.states.transpose();
        inputs.bottomRows(na) = batch.actions.transpose();
        head->train(inputs, targets, config.reward.head_lr);
      }
    }
  };

  const auto emit_log = [&]() {
    LogRow row;
    row.env_steps = env.coverage_record().env_steps;
    row.coverage = coverage(env.coverage_record());
    row.mean_reward = window.reward_count ? window.reward_sum / double(window.reward_count) : 0.0;
    row.sigma2 = sigma.sigma2;
    row.mean_lifelong = window.diag_count ? window.lifelong_sum / double(window.diag_count) : 0.0;
    row.mean_prefix_explained =
        window.diag_count ? window.explained_sum / double(window.diag_count) : 0.0;
    row.episode_entropy = have_entropy ? last_entropy : episode_entropy(env.episode_counts());
    window.clear();
    result.rows.push_back(row);
    if (observer) observer->on_log(row);
  };

  VectorXd state = env.features();
  if (env.room_of(env.cell()) == terminal_room) result.terminal_room_first_visit = 0;
  if (coverage(env.coverage_record()) >= config.coverage_threshold) result.steps_to_threshold = 0;
  std::uint64_t last_logged = std::uint64_t(-1);

  for (Index step = 0; step < config.budget_steps; ++step) {
    Index action;
    if (step < config.training.prefill) {
      std::uniform_int_distribution<Index> pick(0, na - 1);
      action = pick(rng);
    } else {
      RewardContext ctx;
      ctx.sigma = sigma;
      ctx.head = head ? &*head : nullptr;
      auto decision = planner.plan(model, state, ctx);
      action = decision.action;
      returns.add(decision.scores[static_cast<std::size_t>(decision.candidate)]);
      for (Index t = 0; t < decision.raw_rewards.size(); ++t) {
        window.reward_sum += decision.raw_rewards(t);
        ++window.reward_count;
      }
      if (decision.rollout.length() > 0) {
        const double ridge = ridge_value(sigma, d, config.reward.ridge_multiplier);
        const auto trace =
            cig_rewards(build_kernel(compute_deviations(decision.rollout.member_predictions), ridge));
        const auto diag = prefix_diagnostics(trace);
        for (Index t = 0; t < trace.horizon(); ++t) {
          window.lifelong_sum += trace.lifelong(t);
          window.explained_sum += diag.explained_fraction[static_cast<std::size_t>(t)];
          ++window.diag_count;
        }
      }
    }

    const VectorXd action_vec = env.action_features(action);
    const StepResult sr = env.step(action);
    buffer.add(state, action_vec, sr.features);
    const std::uint64_t steps_now = env.coverage_record().env_steps;
    if (!result.terminal_room_first_visit && env.room_of(env.cell()) == terminal_room) {
      result.terminal_room_first_visit = steps_now;
    }
    const double cov = coverage(env.coverage_record());
    if (!result.steps_to_threshold && cov >= config.coverage_threshold) {
      result.steps_to_threshold = steps_now;
    }
    if (sr.done) {
      last_entropy = episode_entropy(env.episode_counts());
      have_entropy = true;
      if (observer) observer->on_episode({episode, steps_now, cov, last_entropy});
      ++episode;
      state = env.reset();
    } else {
      state = sr.features;
    }

    if (step + 1 == config.training.prefill) {
      train(config.training.pretrain_steps);
    } else if (step + 1 > config.training.prefill && (step + 1) % config.training.train_every == 0) {
      train(config.training.gradient_steps);
    }

    const bool stop = config.stop_at_coverage > 0.0 && cov >= config.stop_at_coverage;
    if ((step + 1) % config.log_every == 0 || stop) {
      emit_log();
      last_logged = steps_now;
    }
    if (stop) break;
  }
  if (last_logged != env.coverage_record().env_steps) emit_log();

  result.final_coverage = coverage(env.coverage_record());
  result.env_steps = env.coverage_record().env_steps;
  result.return_mean = returns.count() ? returns.mean() : 0.0;
  result.return_stddev = returns.count() > 1 ? returns.stddev() : 0.0;
  result.final_sigma2 = sigma.sigma2;
  return result;
}

}  // namespace cig
