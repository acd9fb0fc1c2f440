#pragma once

#include <string>
#include <vector>

#include "drivelab/diff/ops.hpp"
#include "drivelab/diff/rng.hpp"

namespace drivelab::diff {

/// Whether a forward pass records parameters as trainable leaves or constants.
enum class Mode { Train, Frozen };

inline Var use(Tape& tape, Parameter& p, Mode mode) {
  return mode == Mode::Train ? tape.param(p) : tape.frozen(p);
}

/// Fully connected layer y = x W + b.
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out);

  Var operator()(Tape& tape, Var x, Mode mode);

  /// Xavier-uniform weights scaled by `gain`, zero bias.
  void init(Rng& rng, double gain = 1.0);
  ParamList parameters() { return {&weight, &bias}; }
  std::size_t in() const { return weight.value.rows(); }
  std::size_t out() const { return weight.value.cols(); }

  Parameter weight;
  Parameter bias;
};

/// Stack of Linear layers with tanh between them (no activation after the last).
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& name, std::vector<std::size_t> sizes);

  Var operator()(Tape& tape, Var x, Mode mode);

  void init(Rng& rng, double last_gain = 1.0);
  ParamList parameters();
  std::size_t in() const { return layers_.front().in(); }
  std::size_t out() const { return layers_.back().out(); }

 private:
  std::vector<Linear> layers_;
};

void append(ParamList& dst, const ParamList& src);
void zero_values(const ParamList& params);

}  // namespace drivelab::diff
