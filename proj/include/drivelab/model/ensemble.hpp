#pragma once

#include <vector>

#include "drivelab/diff/adam.hpp"
#include "drivelab/diff/layers.hpp"

namespace drivelab::model {

struct EnsembleConfig {
  std::size_t members = 8;  // K
  std::vector<std::size_t> hidden{128};
  double lr = 3e-4;
  void validate() const;
};

/// K forward-dynamics MLPs mapping (feature, action) to the next posterior mean.
class Ensemble {
 public:
  Ensemble(std::size_t feature_dim, std::size_t action_dim, std::size_t out_dim, EnsembleConfig cfg = {});
  // Optimizers hold pointers into the members.
  Ensemble(const Ensemble&) = delete;
  Ensemble& operator=(const Ensemble&) = delete;

  /// Member k is initialised from the k-th split of Rng(seed).
  void init(std::uint64_t seed);

  std::size_t size() const { return members_.size(); }
  const EnsembleConfig& config() const { return cfg_; }

  /// K predictions, each rows x out_dim.
  std::vector<diff::Var> predict_all(diff::Tape& tape, diff::Var feature, diff::Var action, diff::Mode mode);
  /// Disagreement of the members' predictions, rows x 1 (on the tape, so it can
  /// be differentiated through the inputs during imagination).
  diff::Var intrinsic_reward(diff::Tape& tape, diff::Var feature, diff::Var action, diff::Mode mode);
  /// Plain-value intrinsic reward per row.
  std::vector<double> intrinsic_reward(const diff::Tensor& feature, const diff::Tensor& action);

  /// Sum over members of the mean squared error against `target` (constant).
  diff::Var loss(diff::Tape& tape, diff::Var feature, diff::Var action, const diff::Tensor& target);
  /// One update: every member takes a step with its own Adam state. Returns the loss.
  double train_step(const diff::Tensor& feature, const diff::Tensor& action, const diff::Tensor& target);

  diff::ParamList parameters();
  diff::ParamList member_parameters(std::size_t k) { return members_[k].parameters(); }
  diff::Mlp& member(std::size_t k) { return members_[k]; }
  diff::Adam& optimizer(std::size_t k) { return optimizers_[k]; }

 private:
  EnsembleConfig cfg_;
  std::vector<diff::Mlp> members_;
  std::vector<diff::Adam> optimizers_;
};

/// Mean over columns of the population variance (divide by K) across members.
/// Returns rows x 1. Requires K >= 2.
diff::Var disagreement(const std::vector<diff::Var>& preds);
/// Same for a K x D matrix of predictions of a single input.
double disagreement(const diff::Tensor& preds);

}  // namespace drivelab::model
