#include "cig/ensemble.hpp"

#include "json.hpp"

#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <string>

namespace cig {

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

void TransitionBatch::validate() const {
  const Index b = states.rows();
  if (b < 1) throw ValidationError("transition batch is empty");
  if (actions.rows() != b || next_states.rows() != b) {
    throw ValidationError("transition batch row counts differ: states " + std::to_string(b) +
                          ", actions " + std::to_string(actions.rows()) + ", next_states " +
                          std::to_string(next_states.rows()));
  }
  if (!states.allFinite() || !actions.allFinite() || !next_states.allFinite()) {
    throw ValidationError("transition batch has non-finite entries");
  }
}

Mlp::Mlp(Index input_dim, Index hidden, Index output_dim, bool residual, std::uint64_t seed)
    : input_dim_(input_dim), hidden_(hidden), output_dim_(output_dim), residual_(residual) {
  if (input_dim < 1 || hidden < 1 || output_dim < 1) {
    throw ValidationError("network dimensions must be positive");
  }
  if (residual && output_dim > input_dim) {
    throw ValidationError("residual member needs output_dim <= input_dim");
  }
  off_w2_ = hidden * input_dim + hidden;
  off_w3_ = off_w2_ + hidden * hidden + hidden;
  params_ = VectorXd::Zero(off_w3_ + output_dim * hidden + output_dim);

  // Glorot uniform weights, zero biases.
  std::mt19937_64 rng(seed);
  const auto fill = [&](Index offset, Index fan_out, Index fan_in) {
    const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Index i = 0; i < fan_out * fan_in; ++i) params_(offset + i) = u(rng);
  };
  fill(0, hidden, input_dim);
  fill(off_w2_, hidden, hidden);
  fill(off_w3_, output_dim, hidden);
}

MatrixXd Mlp::forward(const MatrixXd& inputs) const {
  MatrixXd h1 = w1() * inputs;
  h1.colwise() += b1().col(0);
  h1 = h1.array().tanh();
  MatrixXd h2 = w2() * h1;
  h2.colwise() += b2().col(0);
  h2 = h2.array().tanh();
  MatrixXd out = w3() * h2;
  out.colwise() += b3().col(0);
  if (residual_) out += inputs.topRows(output_dim_);
  return out;
}

double Mlp::loss(const MatrixXd& inputs, const MatrixXd& targets) const {
  const MatrixXd err = forward(inputs) - targets;
  return err.squaredNorm() / double(err.size());
}

double Mlp::loss_and_gradient(const MatrixXd& inputs, const MatrixXd& targets,
                              VectorXd& gradient) const {
  const Index batch = inputs.cols();
  MatrixXd h1 = w1() * inputs;
  h1.colwise() += b1().col(0);
  h1 = h1.array().tanh();
  MatrixXd h2 = w2() * h1;
  h2.colwise() += b2().col(0);
  h2 = h2.array().tanh();
  MatrixXd out = w3() * h2;
  out.colwise() += b3().col(0);
  if (residual_) out += inputs.topRows(output_dim_);

  const MatrixXd err = out - targets;
  const double loss = err.squaredNorm() / double(err.size());

  gradient.resize(params_.size());
  const MatrixXd g_out = err * (2.0 / double(batch * output_dim_));
  Map(gradient.data() + off_w3_, output_dim_, hidden_) = g_out * h2.transpose();
  Map(gradient.data() + off_w3_ + output_dim_ * hidden_, output_dim_, 1) = g_out.rowwise().sum();

  const MatrixXd g_z2 = ((w3().transpose() * g_out).array() * (1.0 - h2.array().square())).matrix();
  Map(gradient.data() + off_w2_, hidden_, hidden_) = g_z2 * h1.transpose();
  Map(gradient.data() + off_w2_ + hidden_ * hidden_, hidden_, 1) = g_z2.rowwise().sum();

  const MatrixXd g_z1 = ((w2().transpose() * g_z2).array() * (1.0 - h1.array().square())).matrix();
  Map(gradient.data(), hidden_, input_dim_) = g_z1 * inputs.transpose();
  Map(gradient.data() + hidden_ * input_dim_, hidden_, 1) = g_z1.rowwise().sum();
  return loss;
}

EnsembleModel::EnsembleModel(EnsembleConfig config) : config_(config) {
  if (config_.members < 2) {
    throw ValidationError("ensemble needs M >= 2 members, got " + std::to_string(config_.members));
  }
  if (config_.state_dim < 1) throw ValidationError("ensemble state_dim must be >= 1");
  if (config_.action_dim < 0) throw ValidationError("ensemble action_dim must be >= 0");
  if (config_.output_dim == 0) config_.output_dim = config_.state_dim;
  for (Index k = 0; k < config_.members; ++k) {
    const std::uint64_t seed = mix_seed(config_.seed * 1000003ULL + std::uint64_t(k));
    seeds_.push_back(seed);
    members_.emplace_back(input_dim(), config_.hidden, config_.output_dim, config_.residual, seed);
    moment1_.push_back(VectorXd::Zero(members_.back().parameter_count()));
    moment2_.push_back(VectorXd::Zero(members_.back().parameter_count()));
  }
}

MatrixXd EnsembleModel::stack_inputs(const MatrixXd& states, const MatrixXd& actions) const {
  if (states.cols() != state_dim() || actions.cols() != action_dim() ||
      states.rows() != actions.rows()) {
    throw ValidationError("expected states T x " + std::to_string(state_dim()) +
                          " and actions T x " + std::to_string(action_dim()) + ", got " +
                          std::to_string(states.rows()) + "x" + std::to_string(states.cols()) +
                          " and " + std::to_string(actions.rows()) + "x" +
                          std::to_string(actions.cols()));
  }
  MatrixXd inputs(input_dim(), states.rows());
  inputs.topRows(state_dim()) = states.transpose();
  inputs.bottomRows(action_dim()) = actions.transpose();
  return inputs;
}

std::vector<MatrixXd> EnsembleModel::predict_all(const MatrixXd& states,
                                                 const MatrixXd& actions) const {
  const MatrixXd inputs = stack_inputs(states, actions);
  std::vector<MatrixXd> out;
  out.reserve(members_.size());
  for (const auto& m : members_) out.push_back(m.forward(inputs).transpose());
  return out;
}

void EnsembleModel::predict_columns(const MatrixXd& inputs, std::vector<MatrixXd>& out) const {
  if (inputs.rows() != input_dim()) {
    throw ValidationError("expected " + std::to_string(input_dim()) + " input rows, got " +
                          std::to_string(inputs.rows()));
  }
  out.resize(members_.size());
  for (std::size_t k = 0; k < members_.size(); ++k) out[k] = members_[k].forward(inputs);
}

MatrixXd EnsembleModel::predict_mean(const MatrixXd& states, const MatrixXd& actions) const {
  const MatrixXd inputs = stack_inputs(states, actions);
  MatrixXd mean = MatrixXd::Zero(output_dim(), inputs.cols());
  for (const auto& m : members_) mean += m.forward(inputs);
  return (mean / double(members_.size())).transpose();
}

std::vector<double> EnsembleModel::train_step(const TransitionBatch& batch, double lr) {
  batch.validate();
  if (!(lr >= 0.0)) throw ValidationError("learning rate must be >= 0");
  if (batch.next_states.cols() != output_dim()) {
    throw ValidationError("next_states has " + std::to_string(batch.next_states.cols()) +
                          " columns, expected " + std::to_string(output_dim()));
  }
  const MatrixXd inputs = stack_inputs(batch.states, batch.actions);
  const MatrixXd targets = batch.next_states.transpose();
  ++step_count_;

  std::vector<double> losses(members_.size());
  VectorXd grad;
  for (std::size_t k = 0; k < members_.size(); ++k) {
    losses[k] = members_[k].loss_and_gradient(inputs, targets, grad);
    if (!std::isfinite(losses[k]) || !grad.allFinite()) {
      throw NumericalError("member " + std::to_string(k) + " produced a non-finite loss at step " +
                           std::to_string(step_count_));
    }
    VectorXd& params = members_[k].parameters();
    if (config_.optimizer == Optimizer::kSgdMomentum) {
      moment1_[k] = config_.momentum * moment1_[k] + grad;
      params -= lr * moment1_[k];
    } else {
      const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
      moment1_[k] = b1 * moment1_[k] + (1.0 - b1) * grad;
      moment2_[k] = b2 * moment2_[k] + (1.0 - b2) * grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(b1, double(step_count_));
      const double c2 = 1.0 - std::pow(b2, double(step_count_));
      params.array() -= lr * (moment1_[k].array() / c1) /
                        ((moment2_[k].array() / c2).sqrt() + config_.adam_epsilon);
    }
  }
  return losses;
}

std::vector<double> EnsembleModel::mean_residuals(const TransitionBatch& batch) const {
  batch.validate();
  const MatrixXd mean = predict_mean(batch.states, batch.actions);
  std::vector<double> out(static_cast<std::size_t>(batch.size()));
  for (Index i = 0; i < batch.size(); ++i) {
    out[i] = (batch.next_states.row(i) - mean.row(i)).squaredNorm() / double(output_dim());
  }
  return out;
}

void EnsembleModel::save(std::ostream& os) const {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint format assumes a little-endian host");
  nlohmann::json header = {
      {"format", "cig-ensemble"},
      {"version", 1},
      {"members", config_.members},
      {"state_dim", config_.state_dim},
      {"action_dim", config_.action_dim},
      {"output_dim", config_.output_dim},
      {"hidden", config_.hidden},
      {"residual", config_.residual},
      {"seed", config_.seed},
      {"seeds", seeds_},
      {"step_count", step_count_},
      {"parameters_per_member", members_.front().parameter_count()},
  };
  os << header.dump() << '\n';
  for (const auto& m : members_) {
    os.write(reinterpret_cast<const char*>(m.parameters().data()),
             static_cast<std::streamsize>(m.parameter_count() * sizeof(double)));
  }
  if (!os) throw NumericalError("failed to write ensemble checkpoint");
}

EnsembleModel EnsembleModel::load(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ValidationError("checkpoint has no header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint header is not JSON: ") + e.what());
  }
  if (header.value("format", "") != "cig-ensemble" || header.value("version", 0) != 1) {
    throw ValidationError("unsupported checkpoint format");
  }
  EnsembleConfig config;
  config.members = header.at("members").get<Index>();
  config.state_dim = header.at("state_dim").get<Index>();
  config.action_dim = header.at("action_dim").get<Index>();
  config.output_dim = header.at("output_dim").get<Index>();
  config.hidden = header.at("hidden").get<Index>();
  config.residual = header.at("residual").get<bool>();
  config.seed = header.at("seed").get<std::uint64_t>();
  EnsembleModel model(config);
  const auto seeds = header.at("seeds").get<std::vector<std::uint64_t>>();
  if (seeds.size() != static_cast<std::size_t>(config.members)) {
    throw ValidationError("checkpoint seed list does not match member count");
  }
  model.seeds_ = seeds;
  model.step_count_ = header.at("step_count").get<std::uint64_t>();
  const Index per_member = header.at("parameters_per_member").get<Index>();
  for (auto& m : model.members_) {
    if (m.parameter_count() != per_member) {
      throw ValidationError("checkpoint parameter count does not match the architecture");
    }
    is.read(reinterpret_cast<char*>(m.parameters().data()),
            static_cast<std::streamsize>(per_member * sizeof(double)));
    if (!is) throw ValidationError("checkpoint is truncated");
  }
  return model;
}

}  // namespace cig
