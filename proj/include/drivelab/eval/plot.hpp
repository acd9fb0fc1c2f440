#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace drivelab::eval {

inline constexpr std::size_t kRewardWindow = 500;

struct RewardSeries {
  std::string label;
  std::vector<double> step;   // x, env steps
  std::vector<double> rate;   // windowed mean extrinsic reward per step
  /// First env step of fine-tuning, or < 0 when the run has none.
  double finetune_start = -1.0;
};

/// Expands per-row means over each logging interval into a per-step series
/// and takes a trailing mean over `window` steps (the prefix when shorter).
/// Returns the windowed value at each row's step.
std::vector<double> windowed_rate(const std::vector<double>& steps, const std::vector<double>& means,
                                  std::size_t window = kRewardWindow);

RewardSeries load_reward_series(const std::filesystem::path& metrics_csv);

/// Standalone SVG line chart, one line and legend entry per series, with the
/// fine-tuning region shaded.
std::string render_reward_svg(const std::vector<RewardSeries>& series);

void plot_reward_rate(const std::vector<std::filesystem::path>& metrics_csvs, const std::filesystem::path& out);

}  // namespace drivelab::eval
