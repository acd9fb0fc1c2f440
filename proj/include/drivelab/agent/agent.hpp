#pragma once

#include <functional>
#include <vector>

#include "drivelab/diff/adam.hpp"
#include "drivelab/diff/layers.hpp"
#include "drivelab/model/rssm.hpp"

namespace drivelab::agent {

using diff::Mode;
using diff::ParamList;
using diff::Rng;
using diff::Tape;
using diff::Tensor;
using diff::Var;

struct AgentConfig {
  std::size_t horizon = 15;  // H
  double lambda = 0.95;
  double entropy_weight = 3e-4;
  double gamma = 0.99;
  double steer_penalty = 0.5;    // lambda_steer
  double steer_threshold = 0.8;  // delta
  double alpha = 0.0;            // weight of the extrinsic term in mix_rewards
  bool penalty_in_explore = true;
  bool penalty_in_finetune = true;
  std::vector<std::size_t> hidden{128};
  double actor_lr = 1e-4;
  double critic_lr = 1e-4;
  double grad_clip = 100.0;
  void validate() const;
};

inline constexpr double kMinActionStd = 0.05;
inline constexpr double kMaxActionStd = 2.0;

/// -steer_penalty when |steer| > threshold, else 0.
double steering_penalty(double steer, double penalty, double threshold);
/// alpha * r_ext + (1 - alpha) * r_int. Throws for alpha outside [0, 1].
double mix_rewards(double r_ext, double r_int, double alpha);

/// Plain lambda-returns. rewards and conts are indexed 1..H (stored 0..H-1),
/// values 0..H. Returns R_1..R_H with R_{H+1} = V(s_H).
std::vector<double> lambda_returns(const std::vector<double>& rewards, const std::vector<double>& values,
                                   const std::vector<double>& conts, double gamma, double lambda);
/// Same recursion on the tape, rows x 1 per step.
std::vector<Var> lambda_returns(const std::vector<Var>& rewards, const std::vector<Var>& values,
                                const std::vector<Var>& conts, double gamma, double lambda);

struct PolicyOutput {
  Var mean;  // pre-tanh, rows x action_dim
  Var std;
};

/// One imagined step handed to the reward callback.
struct ImagineStep {
  Var h;
  Var z;
  Var action;
  Var next_h;
  Var next_z;
};
/// Imagined reward before the steering penalty, rows x 1.
using RewardFn = std::function<Var(Tape&, const ImagineStep&)>;

struct ImaginedTrajectory {
  std::vector<Var> h;        // 0..H
  std::vector<Var> z;        // 0..H
  std::vector<Var> actions;  // 0..H-1, squashed
  std::vector<Var> rewards;  // 1..H stored 0..H-1, penalty included
  std::vector<Var> conts;    // 1..H stored 0..H-1, constants in [0, 1]
  std::vector<Var> entropy;  // per action step, rows x 1
  std::size_t horizon() const { return actions.size(); }
};

struct ActorCriticStats {
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double entropy = 0.0;
  double return_mean = 0.0;
};

class Agent {
 public:
  Agent(std::size_t feature_dim, std::size_t action_dim, AgentConfig cfg = {});
  Agent(const Agent&) = delete;
  Agent& operator=(const Agent&) = delete;

  void init(Rng& rng);
  const AgentConfig& config() const { return cfg_; }
  AgentConfig& mutable_config() { return cfg_; }

  PolicyOutput policy(Tape& tape, Var feature, Mode mode);
  Var value(Tape& tape, Var feature, Mode mode);

  /// Actions in [-1, 1], rows x action_dim. Greedy returns tanh(mean).
  Tensor act(const Tensor& feature, bool greedy, Rng& rng);

  /// Roll the policy through the frozen world model from (h0, z0).
  /// `explore` selects which steering-penalty switch applies.
  ImaginedTrajectory imagine(Tape& tape, model::WorldModel& wm, const Tensor& h0, const Tensor& z0, std::size_t horizon,
                             const RewardFn& reward, bool explore, Rng& rng);

  /// Actor and critic losses on the same tape; one Adam step each.
  ActorCriticStats update(Tape& tape, const ImaginedTrajectory& traj);

  ParamList policy_parameters() { return policy_.parameters(); }
  ParamList value_parameters() { return value_.parameters(); }
  ParamList parameters();
  diff::Adam& actor_optimizer() { return actor_opt_; }
  diff::Adam& critic_optimizer() { return critic_opt_; }

 private:
  AgentConfig cfg_;
  std::size_t action_dim_;
  diff::Mlp policy_;
  diff::Mlp value_;
  diff::Adam actor_opt_;
  diff::Adam critic_opt_;
};

/// Pre-tanh Gaussian entropy per row, rows x 1.
Var gaussian_entropy(Var std);
/// One-sample estimate of the entropy of tanh(u), u ~ N(mean, std), given the
/// pre-tanh sample u. Adds log|d tanh/du| to the Gaussian entropy, rows x 1.
Var squashed_entropy(Var std, Var u);

}  // namespace drivelab::agent
