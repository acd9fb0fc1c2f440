#include "drivelab/diff/adam.hpp"

#include <cmath>

namespace drivelab::diff {

void adam_step(const ParamList& params, AdamState& state, double lr) {
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto* p : params) {
      state.m.emplace_back(p->value.rows(), p->value.cols());
      state.v.emplace_back(p->value.rows(), p->value.cols());
    }
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    if (!m.same_shape(p.value) || !p.grad.same_shape(p.value)) {
      throw ShapeError("adam_step: moment/grad shape mismatch for " + p.name);
    }
    double* __restrict w = p.value.data();
    const double* __restrict g = p.grad.data();
    double* __restrict mm = m.data();
    double* __restrict vv = v.data();
    const std::size_t n = p.value.size();
    const double b1 = state.beta1, b2 = state.beta2, eps = state.eps;
    const double step = lr / c1, inv_c2 = 1.0 / c2;
    for (std::size_t i = 0; i < n; ++i) {
      mm[i] = b1 * mm[i] + (1.0 - b1) * g[i];
      vv[i] = b2 * vv[i] + (1.0 - b2) * g[i] * g[i];
      w[i] -= step * mm[i] / (std::sqrt(vv[i] * inv_c2) + eps);
    }
  }
}

double clip_grad_norm(const ParamList& params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params) {
    for (double g : p->grad.values()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto* p : params) {
      for (double& g : p->grad.values()) g *= s;
    }
  }
  return norm;
}

void Adam::step() {
  if (clip_ > 0.0) clip_grad_norm(params_, clip_);
  adam_step(params_, state_, lr_);
}

}  // namespace drivelab::diff
