#include "drivelab/diff/layers.hpp"

#include <cmath>

namespace drivelab::diff {

Linear::Linear(const std::string& name, std::size_t in, std::size_t out)
    : weight(name + ".w", in, out), bias(name + ".b", 1, out) {}

Var Linear::operator()(Tape& tape, Var x, Mode mode) {
  return affine(x, use(tape, weight, mode), use(tape, bias, mode));
}

void Linear::init(Rng& rng, double gain) {
  const double a = gain * std::sqrt(6.0 / static_cast<double>(in() + out()));
  for (double& w : weight.value.values()) w = rng.uniform(-a, a);
  bias.value.fill(0.0);
}

Mlp::Mlp(const std::string& name, std::vector<std::size_t> sizes) {
  if (sizes.size() < 2) throw std::invalid_argument("Mlp " + name + ": need at least input and output sizes");
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    layers_.emplace_back(name + "." + std::to_string(i), sizes[i], sizes[i + 1]);
  }
}

Var Mlp::operator()(Tape& tape, Var x, Mode mode) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i](tape, x, mode);
    if (i + 1 < layers_.size()) x = tanh(x);
  }
  return x;
}

void Mlp::init(Rng& rng, double last_gain) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].init(rng, i + 1 == layers_.size() ? last_gain : 1.0);
  }
}

ParamList Mlp::parameters() {
  ParamList out;
  for (auto& l : layers_) append(out, l.parameters());
  return out;
}

void append(ParamList& dst, const ParamList& src) { dst.insert(dst.end(), src.begin(), src.end()); }

void zero_values(const ParamList& params) {
  for (auto* p : params) p->value.fill(0.0);
}

}  // namespace drivelab::diff
