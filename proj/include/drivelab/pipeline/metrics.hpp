#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace drivelab::pipeline {

inline constexpr const char* kMetricsHeader =
    "step,phase,task,loss_total,loss_recon,loss_reward,kl_raw,kl_used,loss_cont,loss_ensemble,r_int_mean,r_ext_mean,"
    "actor_loss,critic_loss,entropy";

/// One metrics row. Loss columns are empty when no update ran since the
/// previous row.
struct MetricsRow {
  std::size_t step = 0;
  std::string phase;
  std::string task;
  std::optional<double> loss_total, loss_recon, loss_reward, kl_raw, kl_used, loss_cont, loss_ensemble, r_int_mean;
  double r_ext_mean = 0.0;
  std::optional<double> actor_loss, critic_loss, entropy;
};

std::string format_metrics_row(const MetricsRow& row);

/// Append-only CSV. The header is written when the file is new or empty.
class MetricsLog {
 public:
  explicit MetricsLog(std::filesystem::path path);
  void write(const MetricsRow& row);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Shortest round-trip decimal text for a double.
std::string format_double(double v);

/// Parsed metrics CSV: column name -> values (NaN for empty cells) plus the raw
/// phase/task columns.
struct MetricsTable {
  std::vector<double> step;
  std::vector<std::string> phase;
  std::vector<std::string> task;
  std::vector<double> r_ext_mean;
  std::vector<double> r_int_mean;
};
MetricsTable read_metrics(const std::filesystem::path& path);

}  // namespace drivelab::pipeline
