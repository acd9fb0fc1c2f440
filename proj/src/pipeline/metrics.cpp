#include "drivelab/pipeline/metrics.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace drivelab::pipeline {

std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace {

std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_cell(const std::string& s) {
  if (s.empty()) return std::nan("");
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw std::runtime_error("metrics: bad number '" + s + "'");
  return v;
}

}  // namespace

std::string format_metrics_row(const MetricsRow& r) {
  std::string s = std::to_string(r.step) + "," + r.phase + "," + r.task;
  for (const auto* v : {&r.loss_total, &r.loss_recon, &r.loss_reward, &r.kl_raw, &r.kl_used, &r.loss_cont,
                        &r.loss_ensemble, &r.r_int_mean}) {
    s += "," + cell(*v);
  }
  s += "," + format_double(r.r_ext_mean);
  for (const auto* v : {&r.actor_loss, &r.critic_loss, &r.entropy}) s += "," + cell(*v);
  return s;
}

MetricsLog::MetricsLog(std::filesystem::path path) : path_(std::move(path)) {
  std::error_code ec;
  const bool fresh = !std::filesystem::exists(path_, ec) || std::filesystem::file_size(path_, ec) == 0;
  if (fresh) {
    std::ofstream f(path_, std::ios::trunc);
    if (!f) throw std::runtime_error("metrics: cannot write " + path_.string());
    f << kMetricsHeader << "\n";
  }
}

void MetricsLog::write(const MetricsRow& row) {
  std::ofstream f(path_, std::ios::app);
  if (!f) throw std::runtime_error("metrics: cannot append to " + path_.string());
  f << format_metrics_row(row) << "\n";
}

MetricsTable read_metrics(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("metrics: cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != kMetricsHeader) {
    throw std::runtime_error("metrics: " + path.string() + " is empty or has an unexpected header");
  }
  MetricsTable t;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 15) {
      throw std::runtime_error("metrics: " + path.string() + " line " + std::to_string(lineno) + " has " +
                               std::to_string(cells.size()) + " columns");
    }
    t.step.push_back(parse_cell(cells[0]));
    t.phase.push_back(cells[1]);
    t.task.push_back(cells[2]);
    t.r_int_mean.push_back(parse_cell(cells[10]));
    t.r_ext_mean.push_back(parse_cell(cells[11]));
  }
  if (t.step.empty()) throw std::runtime_error("metrics: " + path.string() + " has no data rows");
  return t;
}

}  // namespace drivelab::pipeline
