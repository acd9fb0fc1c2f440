#include "drivelab/eval/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "drivelab/pipeline/metrics.hpp"

namespace drivelab::eval {

std::vector<double> windowed_rate(const std::vector<double>& steps, const std::vector<double>& means,
                                  std::size_t window) {
  if (steps.size() != means.size()) throw std::invalid_argument("windowed_rate: column lengths differ");
  if (window == 0) throw std::invalid_argument("windowed_rate: window must be positive");
  // Piecewise-constant per-step reward: means[i] on (steps[i-1], steps[i]].
  std::vector<double> starts(steps.size()), prefix(steps.size() + 1, 0.0);
  double prev = 0.0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i] <= prev) {
      throw std::invalid_argument("windowed_rate: steps must be positive and increasing");
    }
    starts[i] = prev;
    prefix[i + 1] = prefix[i] + means[i] * (steps[i] - prev);
    prev = steps[i];
  }
  auto cumulative = [&](double x) {
    if (x <= 0.0) return 0.0;
    const auto it = std::lower_bound(steps.begin(), steps.end(), x);
    const auto i = static_cast<std::size_t>(it - steps.begin());
    return prefix[i] + means[i] * (x - starts[i]);
  };
  std::vector<double> out(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const double lo = std::max(0.0, steps[i] - static_cast<double>(window));
    out[i] = (prefix[i + 1] - cumulative(lo)) / (steps[i] - lo);
  }
  return out;
}

RewardSeries load_reward_series(const std::filesystem::path& metrics_csv) {
  const pipeline::MetricsTable t = pipeline::read_metrics(metrics_csv);
  RewardSeries s;
  s.label = metrics_csv.stem().string();
  s.step = t.step;
  s.rate = windowed_rate(t.step, t.r_ext_mean);
  for (std::size_t i = 0; i < t.phase.size(); ++i) {
    if (t.phase[i] == "finetune") {
      s.finetune_start = i == 0 ? 0.0 : t.step[i - 1];
      break;
    }
  }
  return s;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

}  // namespace

std::string render_reward_svg(const std::vector<RewardSeries>& series) {
  if (series.empty()) throw std::invalid_argument("plot: no series");
  const double W = 800, H = 480, left = 70, right = 20, top = 20, bottom = 50;
  double x_max = 0.0, y_min = INFINITY, y_max = -INFINITY;
  for (const auto& s : series) {
    if (s.step.empty()) throw std::invalid_argument("plot: series '" + s.label + "' is empty");
    x_max = std::max(x_max, s.step.back());
    for (double v : s.rate) {
      y_min = std::min(y_min, v);
      y_max = std::max(y_max, v);
    }
  }
  if (y_max - y_min < 1e-9) {
    y_min -= 1.0;
    y_max += 1.0;
  }
  const double pad = 0.05 * (y_max - y_min);
  y_min -= pad;
  y_max += pad;
  auto px = [&](double x) { return left + (W - left - right) * x / x_max; };
  auto py = [&](double y) { return top + (H - top - bottom) * (y_max - y) / (y_max - y_min); };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(W) + "\" height=\"" + num(H) +
                    "\" viewBox=\"0 0 " + num(W) + " " + num(H) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (const auto& s : series) {
    if (s.finetune_start < 0.0) continue;
    svg += "<rect class=\"finetune\" x=\"" + num(px(s.finetune_start)) + "\" y=\"" + num(top) + "\" width=\"" +
           num(px(s.step.back()) - px(s.finetune_start)) + "\" height=\"" + num(H - top - bottom) +
           "\" fill=\"#808080\" fill-opacity=\"0.2\"/>\n";
  }
  svg += "<line x1=\"" + num(left) + "\" y1=\"" + num(H - bottom) + "\" x2=\"" + num(W - right) + "\" y2=\"" +
         num(H - bottom) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + num(left) + "\" y1=\"" + num(top) + "\" x2=\"" + num(left) + "\" y2=\"" + num(H - bottom) +
         "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x_max * i / 4.0, yv = y_min + (y_max - y_min) * i / 4.0;
    svg += "<text x=\"" + num(px(xv)) + "\" y=\"" + num(H - bottom + 16) + "\" text-anchor=\"middle\">" +
           std::to_string(static_cast<long long>(std::llround(xv))) + "</text>\n";
    svg += "<text x=\"" + num(left - 6) + "\" y=\"" + num(py(yv) + 4) + "\" text-anchor=\"end\">" + num(yv) +
           "</text>\n";
  }
  svg += "<text x=\"" + num((left + W - right) / 2) + "\" y=\"" + num(H - 10) +
         "\" text-anchor=\"middle\">env steps</text>\n";
  svg += "<text transform=\"translate(16 " + num((top + H - bottom) / 2) +
         ") rotate(-90)\" text-anchor=\"middle\">reward rate (mean r_ext per step, window " +
         std::to_string(kRewardWindow) + ")</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % (sizeof kColors / sizeof kColors[0])];
    std::string pts;
    for (std::size_t i = 0; i < s.step.size(); ++i) {
      pts += (i ? " " : "") + num(px(s.step[i])) + "," + num(py(s.rate[i]));
    }
    svg += "<polyline class=\"series\" fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    const double ly = top + 14 + 16 * static_cast<double>(k);
    svg += "<g class=\"legend\"><line x1=\"" + num(W - right - 160) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" +
           num(W - right - 140) + "\" y2=\"" + num(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>" +
           "<text x=\"" + num(W - right - 134) + "\" y=\"" + num(ly) + "\">" + escape(s.label) + "</text></g>\n";
  }
  svg += "</svg>\n";
  return svg;
}

void plot_reward_rate(const std::vector<std::filesystem::path>& metrics_csvs, const std::filesystem::path& out) {
  if (metrics_csvs.empty()) throw std::invalid_argument("plot: no metrics files given");
  std::vector<RewardSeries> series;
  for (const auto& p : metrics_csvs) series.push_back(load_reward_series(p));
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw std::runtime_error("plot: cannot write " + out.string());
  f << render_reward_svg(series);
}

}  // namespace drivelab::eval
