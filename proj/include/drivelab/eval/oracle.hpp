#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace drivelab::eval {

struct OracleCase {
  std::string name;
  std::size_t trials = 0;
  std::size_t coords = 0;
  double max_rel_error = 0.0;
  double rtol = 0.0;
  bool passed = true;
};

struct OracleSuite {
  std::vector<OracleCase> cases;
  bool passed() const;
  double seconds = 0.0;
};

/// Central-difference check of every differentiable op on random inputs,
/// `trials` draws each, rtol 1e-6.
OracleSuite run_op_oracle(std::size_t trials, std::uint64_t seed);

/// Full world-model loss on random driving sequences with fixed sampling
/// noise, rtol 1e-5, `trials` freshly initialized models.
OracleCase run_model_oracle(std::size_t trials, std::uint64_t seed);

}  // namespace drivelab::eval
