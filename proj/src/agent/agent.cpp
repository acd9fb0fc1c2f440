#include "drivelab/agent/agent.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "drivelab/diff/ops.hpp"

namespace drivelab::agent {

using namespace diff;

void AgentConfig::validate() const {
  if (horizon < 1) throw std::invalid_argument("agent: horizon must be at least 1");
  if (gamma < 0.0 || gamma > 1.0 || lambda < 0.0 || lambda > 1.0) {
    throw std::invalid_argument("agent: gamma and lambda must lie in [0, 1]");
  }
  if (steer_threshold <= 0.0 || steer_threshold >= 1.0) {
    throw std::invalid_argument("agent: steering threshold must lie in (0, 1)");
  }
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("agent: alpha must lie in [0, 1]");
  if (entropy_weight < 0.0 || steer_penalty < 0.0) throw std::invalid_argument("agent: negative weight");
  if (hidden.empty()) throw std::invalid_argument("agent: need at least one hidden layer");
}

double steering_penalty(double steer, double penalty, double threshold) {
  return std::abs(steer) > threshold ? -penalty : 0.0;
}

double mix_rewards(double r_ext, double r_int, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("mix_rewards: alpha " + std::to_string(alpha) + " outside [0, 1]");
  }
  return alpha * r_ext + (1.0 - alpha) * r_int;
}

std::vector<double> lambda_returns(const std::vector<double>& rewards, const std::vector<double>& values,
                                   const std::vector<double>& conts, double gamma, double lambda) {
  const std::size_t H = rewards.size();
  if (H == 0 || conts.size() != H || values.size() != H + 1) {
    throw std::invalid_argument("lambda_returns: need H rewards, H continuations and H + 1 values");
  }
  std::vector<double> R(H);
  double next = values[H];
  for (std::size_t i = H; i-- > 0;) {
    // Stored index i holds step t = i + 1.
    R[i] = rewards[i] + gamma * conts[i] * ((1.0 - lambda) * values[i + 1] + lambda * next);
    next = R[i];
  }
  return R;
}

std::vector<Var> lambda_returns(const std::vector<Var>& rewards, const std::vector<Var>& values,
                                const std::vector<Var>& conts, double gamma, double lambda) {
  const std::size_t H = rewards.size();
  if (H == 0 || conts.size() != H || values.size() != H + 1) {
    throw std::invalid_argument("lambda_returns: need H rewards, H continuations and H + 1 values");
  }
  std::vector<Var> R(H);
  Var next = values[H];
  for (std::size_t i = H; i-- > 0;) {
    R[i] = rewards[i] + gamma * (conts[i] * ((1.0 - lambda) * values[i + 1] + lambda * next));
    next = R[i];
  }
  return R;
}

Var gaussian_entropy(Var std) {
  const double c = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
  return row_sum(log(std)) + c * static_cast<double>(std.cols());
}

Var squashed_entropy(Var std, Var u) {
  // log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
  Var log_jac = 2.0 * (std::numbers::ln2 - u - softplus(-2.0 * u));
  return gaussian_entropy(std) + row_sum(log_jac);
}

Agent::Agent(std::size_t feature_dim, std::size_t action_dim, AgentConfig cfg)
    : cfg_(std::move(cfg)), action_dim_(action_dim) {
  cfg_.validate();
  std::vector<std::size_t> ps{feature_dim}, vs{feature_dim};
  for (std::size_t w : cfg_.hidden) {
    ps.push_back(w);
    vs.push_back(w);
  }
  ps.push_back(2 * action_dim);
  vs.push_back(1);
  policy_ = Mlp("agent.policy", ps);
  value_ = Mlp("agent.value", vs);
  actor_opt_ = Adam(policy_.parameters(), cfg_.actor_lr, cfg_.grad_clip);
  critic_opt_ = Adam(value_.parameters(), cfg_.critic_lr, cfg_.grad_clip);
}

void Agent::init(Rng& rng) {
  policy_.init(rng);
  value_.init(rng, 0.0);
}

ParamList Agent::parameters() {
  ParamList ps = policy_.parameters();
  append(ps, value_.parameters());
  return ps;
}

PolicyOutput Agent::policy(Tape& tape, Var feature, Mode mode) {
  if (feature.cols() != policy_.in()) {
    throw ShapeError("policy: feature has " + std::to_string(feature.cols()) + " columns, expected " +
                     std::to_string(policy_.in()));
  }
  Var out = policy_(tape, feature, mode);
  Var mean = slice_cols(out, 0, action_dim_);
  Var std = kMinActionStd + (kMaxActionStd - kMinActionStd) * sigmoid(slice_cols(out, action_dim_, action_dim_));
  return {mean, std};
}

Var Agent::value(Tape& tape, Var feature, Mode mode) { return value_(tape, feature, mode); }

Tensor Agent::act(const Tensor& feature, bool greedy, Rng& rng) {
  Tape tape;
  const PolicyOutput p = policy(tape, tape.constant(feature), Mode::Frozen);
  if (greedy) return tanh(p.mean).value();
  Var noise = tape.constant(rng.normal_tensor(feature.rows(), action_dim_));
  return tanh(gaussian_sample(p.mean, p.std, noise)).value();
}

ImaginedTrajectory Agent::imagine(Tape& tape, model::WorldModel& wm, const Tensor& h0, const Tensor& z0,
                                  std::size_t horizon, const RewardFn& reward, bool explore, Rng& rng) {
  if (horizon < 1) throw std::invalid_argument("imagine: horizon must be at least 1");
  const auto& mc = wm.config();
  if (h0.cols() != mc.deter || z0.cols() != mc.stoch || h0.rows() != z0.rows()) {
    throw ShapeError("imagine: start states do not match the world model");
  }
  const std::size_t rows = h0.rows();
  const bool penalize = explore ? cfg_.penalty_in_explore : cfg_.penalty_in_finetune;

  ImaginedTrajectory tr;
  Var h = tape.constant(h0);
  Var z = tape.constant(z0);
  tr.h.push_back(h);
  tr.z.push_back(z);
  for (std::size_t t = 0; t < horizon; ++t) {
    const PolicyOutput p = policy(tape, concat_cols({h, z}), Mode::Train);
    Var u = gaussian_sample(p.mean, p.std, tape.constant(rng.normal_tensor(rows, action_dim_)));
    Var a = tanh(u);
    Var next_h = wm.sequence_step(tape, h, z, a, Mode::Frozen);
    const model::Gaussian pri = wm.prior(tape, next_h, Mode::Frozen);
    Var next_z = gaussian_sample(pri.mean, pri.std, tape.constant(rng.normal_tensor(rows, mc.stoch)));

    Var r = reward(tape, ImagineStep{h, z, a, next_h, next_z});
    if (r.rows() != rows || r.cols() != 1) throw ShapeError("imagine: reward callback must return rows x 1");
    if (penalize && cfg_.steer_penalty > 0.0) {
      Tensor pen(rows, 1);
      for (std::size_t i = 0; i < rows; ++i) {
        pen[i] = steering_penalty(a.value()(i, 0), cfg_.steer_penalty, cfg_.steer_threshold);
      }
      r = r + tape.constant(pen);
    }
    Var c = detach(sigmoid(wm.continuation_logit(tape, next_h, next_z, Mode::Frozen)));

    tr.actions.push_back(a);
    tr.rewards.push_back(r);
    tr.conts.push_back(c);
    tr.entropy.push_back(squashed_entropy(p.std, u));
    tr.h.push_back(next_h);
    tr.z.push_back(next_z);
    h = next_h;
    z = next_z;
  }
  return tr;
}

ActorCriticStats Agent::update(Tape& tape, const ImaginedTrajectory& traj) {
  const std::size_t H = traj.horizon();
  if (H == 0 || traj.h.size() != H + 1 || traj.rewards.size() != H || traj.conts.size() != H) {
    throw std::invalid_argument("update: malformed imagined trajectory");
  }
  const std::size_t rows = traj.h[0].rows();

  // Values along the imagined path, differentiable through the dynamics but
  // not into the value parameters.
  std::vector<Var> feats;
  for (std::size_t t = 1; t <= H; ++t) feats.push_back(concat_cols({traj.h[t], traj.z[t]}));
  Var path_values = value(tape, concat_rows(feats), Mode::Frozen);
  std::vector<Var> values{tape.constant(Tensor(rows, 1))};  // V(s_0) is not used by the recursion
  for (std::size_t t = 0; t < H; ++t) values.push_back(slice_rows(path_values, t * rows, rows));
  const std::vector<Var> R = lambda_returns(traj.rewards, values, traj.conts, cfg_.gamma, cfg_.lambda);

  // Loss weight of step t: product of continuation probabilities before it.
  std::vector<Var> weights;
  Tensor w(rows, 1, 1.0);
  for (std::size_t t = 0; t < H; ++t) {
    weights.push_back(tape.constant(w));
    for (std::size_t i = 0; i < rows; ++i) w[i] *= traj.conts[t].value()[i];
  }

  std::vector<Var> actor_terms, entropy_terms, critic_terms;
  std::vector<Var> start_feats;
  for (std::size_t t = 0; t < H; ++t) start_feats.push_back(detach(concat_cols({traj.h[t], traj.z[t]})));
  Var critic_values = value(tape, concat_rows(start_feats), Mode::Train);
  for (std::size_t t = 0; t < H; ++t) {
    actor_terms.push_back(weights[t] * R[t]);
    entropy_terms.push_back(weights[t] * traj.entropy[t]);
    Var v = slice_rows(critic_values, t * rows, rows);
    critic_terms.push_back(weights[t] * (0.5 * square(v - detach(R[t]))));
  }
  Var returns = mean(concat_rows(actor_terms));
  Var entropy = mean(concat_rows(entropy_terms));
  Var actor_loss = -returns - cfg_.entropy_weight * entropy;
  Var critic_loss = mean(concat_rows(critic_terms));

  actor_opt_.zero_grad();
  critic_opt_.zero_grad();
  tape.backward(actor_loss + critic_loss);
  actor_opt_.step();
  critic_opt_.step();

  ActorCriticStats s;
  s.actor_loss = actor_loss.item();
  s.critic_loss = critic_loss.item();
  s.entropy = entropy.item();
  s.return_mean = returns.item();
  return s;
}

}  // namespace drivelab::agent
