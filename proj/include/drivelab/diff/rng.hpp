#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "drivelab/diff/tensor.hpp"

namespace drivelab::diff {

/// Seeded, splittable random source. Every stochastic component receives one
/// of these explicitly; there is no global generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (no cached spare, so state is the engine alone).
  double normal();
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  Tensor normal_tensor(std::size_t rows, std::size_t cols);

  /// Independent child stream; advances this generator by one draw.
  Rng split();

  /// Serialized engine state (for checkpoints).
  std::vector<std::uint64_t> state() const;
  void set_state(const std::vector<std::uint64_t>& words);

  bool operator==(const Rng& o) const { return engine_ == o.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace drivelab::diff
