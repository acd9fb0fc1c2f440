#pragma once

#include <cstdint>
#include <vector>

#include "drivelab/diff/tensor.hpp"

namespace drivelab::diff {

/// First/second moment estimates for a parameter list, in list order.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// One bias-corrected Adam update of `params` from their accumulated grads.
void adam_step(const ParamList& params, AdamState& state, double lr);

/// Scales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before scaling.
double clip_grad_norm(const ParamList& params, double max_norm);

/// Parameter list bundled with its Adam state.
class Adam {
 public:
  Adam() = default;
  Adam(ParamList params, double lr, double clip_norm = 0.0) : params_(std::move(params)), lr_(lr), clip_(clip_norm) {}

  void zero_grad() { zero_grads(params_); }
  void step();

  const ParamList& params() const { return params_; }
  AdamState& state() { return state_; }
  const AdamState& state() const { return state_; }
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::uint64_t steps() const { return state_.t; }

 private:
  ParamList params_;
  AdamState state_;
  double lr_ = 1e-4;
  double clip_ = 0.0;
};

}  // namespace drivelab::diff
