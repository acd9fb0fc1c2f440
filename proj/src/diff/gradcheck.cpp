#include "drivelab/diff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "drivelab/diff/rng.hpp"

namespace drivelab::diff {

double relative_error(double analytic, double numeric, double scale_floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), scale_floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const LossBuilder& loss) {
  Tape tape;
  return loss(tape).item();
}

}  // namespace

FiniteDiffReport finite_diff_check(const LossBuilder& loss, const ParamList& params, const FiniteDiffOptions& opts) {
  zero_grads(params);
  {
    Tape tape;
    Var l = loss(tape);
    tape.backward(l);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto* p : params) analytic.push_back(p->grad);

  Rng rng(opts.seed);
  std::vector<std::vector<std::size_t>> chosen(params.size());
  if (opts.total_coords > 0) {
    std::size_t total = 0;
    for (const auto* p : params) total += p->value.size();
    for (std::size_t k = 0; k < opts.total_coords; ++k) {
      std::size_t flat = rng.index(total);
      for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const std::size_t n = params[pi]->value.size();
        if (flat < n) {
          chosen[pi].push_back(flat);
          break;
        }
        flat -= n;
      }
    }
  } else {
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      const std::size_t n = params[pi]->value.size();
      if (opts.max_coords_per_param == 0 || opts.max_coords_per_param >= n) {
        chosen[pi].resize(n);
        std::iota(chosen[pi].begin(), chosen[pi].end(), std::size_t{0});
      } else {
        for (std::size_t k = 0; k < opts.max_coords_per_param; ++k) chosen[pi].push_back(rng.index(n));
      }
    }
  }

  FiniteDiffReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    ParamCheck check{p.name, 0, 0.0};
    for (std::size_t i : chosen[pi]) {
      const double saved = p.value[i];
      p.value[i] = saved + opts.h;
      const double fp = evaluate(loss);
      p.value[i] = saved - opts.h;
      const double fm = evaluate(loss);
      p.value[i] = saved;
      const double numeric = (fp - fm) / (2.0 * opts.h);
      const double err = relative_error(analytic[pi][i], numeric, opts.scale_floor);
      check.max_rel_error = std::max(check.max_rel_error, std::isfinite(err) ? err : INFINITY);
      ++check.coords;
    }
    report.coords += check.coords;
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.params.push_back(std::move(check));
  }
  report.passed = report.max_rel_error <= opts.rtol;
  // Leave the parameters' grads as computed by the analytic pass.
  for (std::size_t pi = 0; pi < params.size(); ++pi) params[pi]->grad = analytic[pi];
  return report;
}

}  // namespace drivelab::diff
