#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "drivelab/diff/tape.hpp"

namespace drivelab::diff {

struct FiniteDiffOptions {
  double rtol = 1e-6;
  double h = 1e-5;
  /// Coordinates sampled per parameter; 0 checks every coordinate.
  std::size_t max_coords_per_param = 0;
  /// Total coordinates sampled across all parameters (uniformly); 0 disables.
  std::size_t total_coords = 0;
  /// Gradients smaller than this are compared on an absolute scale of
  /// rtol * floor instead of relative to their own magnitude.
  double scale_floor = 1e-3;
  std::uint64_t seed = 0;
};

struct ParamCheck {
  std::string name;
  std::size_t coords = 0;
  double max_rel_error = 0.0;
};

struct FiniteDiffReport {
  std::vector<ParamCheck> params;
  std::size_t coords = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Builds a scalar loss on the given tape. Parameters under test must enter
/// through tape.param(). Must be deterministic across calls.
using LossBuilder = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients against central differences
/// (f(x+h) - f(x-h)) / 2h on (optionally subsampled) coordinates.
/// Error per coordinate is |a - n| / max(|a|, |n|, scale_floor).
FiniteDiffReport finite_diff_check(const LossBuilder& loss, const ParamList& params,
                                   const FiniteDiffOptions& opts = {});

double relative_error(double analytic, double numeric, double scale_floor);

}  // namespace drivelab::diff
