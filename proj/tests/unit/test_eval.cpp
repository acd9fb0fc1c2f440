#include <cmath>
#include <filesystem>
#include <fstream>
#include <regex>
#include <set>

#include "doctest.h"
#include "drivelab/eval/eval.hpp"
#include "drivelab/eval/oracle.hpp"
#include "drivelab/eval/plot.hpp"
#include "support/fixtures.hpp"

using namespace drivelab;
using namespace drivelab::eval;
namespace fs = std::filesystem;

namespace {

EvalReport synthetic_report(std::size_t completed, std::size_t collisions, std::size_t offroad = 0,
                            std::size_t wrongdir = 0, std::size_t stall = 0) {
  EvalReport r;
  auto add = [&](sim::Event e, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      EpisodeRecord ep;
      ep.reason = e;
      ep.steps = 10;
      r.episodes.push_back(ep);
      r.total_steps += 10;
    }
  };
  add(sim::Event::Completed, completed);
  add(sim::Event::Collision, collisions);
  add(sim::Event::OffRoad, offroad);
  add(sim::Event::WrongDirection, wrongdir);
  add(sim::Event::Stall, stall);
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "drivelab_test_eval";
  fs::create_directories(dir);
  fs::remove(dir / name);
  return dir / name;
}

void write_metrics(const fs::path& p, const std::vector<std::tuple<int, std::string, double>>& rows) {
  pipeline::MetricsLog log(p);
  for (const auto& [step, phase, r] : rows) {
    pipeline::MetricsRow row;
    row.step = static_cast<std::size_t>(step);
    row.phase = phase;
    row.task = "LF";
    row.r_ext_mean = r;
    log.write(row);
  }
}

/// Per-step expansion and a direct trailing mean.
std::vector<double> brute_rate(const std::vector<double>& steps, const std::vector<double>& means, std::size_t w) {
  std::vector<double> per_step;
  double prev = 0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    for (double s = prev; s < steps[i]; s += 1.0) per_step.push_back(means[i]);
    prev = steps[i];
  }
  std::vector<double> out;
  for (double s : steps) {
    const auto end = static_cast<std::size_t>(s);
    const std::size_t begin = end > w ? end - w : 0;
    double acc = 0;
    for (std::size_t k = begin; k < end; ++k) acc += per_step[k];
    out.push_back(acc / static_cast<double>(end - begin));
  }
  return out;
}

}  // namespace

TEST_CASE("SR and IR arithmetic") {
  const EvalReport r = synthetic_report(32, 10, 5, 2, 1);
  CHECK(r.episodes.size() == 50);
  CHECK(r.sr() == 64.0);
  CHECK(r.ir() == 36.0);
  const EvalReport all = synthetic_report(7, 0);
  CHECK(all.sr() == 100.0);
  CHECK(all.ir() == 0.0);
  CHECK(format_summary(synthetic_report(20, 11)) == "SR 64.52 / IR 35.48");
  CHECK(EvalReport{}.sr() == 0.0);
}

TEST_CASE("SR + IR is exactly 100 and the breakdown partitions episodes") {
  diff::Rng rng(8);
  for (int trial = 0; trial < 2000; ++trial) {
    const EvalReport r = synthetic_report(rng.index(60), rng.index(20), rng.index(20), rng.index(5), rng.index(5) + 1);
    CHECK(r.sr() + r.ir() == 100.0);
    std::size_t sum = 0;
    for (std::size_t e = 0; e < sim::kNumEvents; ++e) sum += r.count(static_cast<sim::Event>(e));
    CHECK(sum == r.episodes.size());
  }
}

TEST_CASE("report CSV schema") {
  EvalReport r = synthetic_report(3, 1);
  r.task = sim::Task::LF_CA;
  r.layout = sim::LayoutFamily::B;
  r.seed = 4;
  const std::string csv = format_report_csv({r});
  CHECK(csv.substr(0, csv.find('\n')) == "task,layout,seed,episodes,sr,ir,n_collision,n_offroad,n_wrongdir,n_stall,n_completed");
  CHECK(format_report_row(r) == "LF+CA,B,4,4,75,25,1,0,0,0,3");
  CHECK(format_report_csv({}) == std::string(kReportHeader) + "\n");
  CHECK(parse_mode("zero") == FinetuneMode::Zero);
  CHECK(parse_mode("few") == FinetuneMode::Few);
  CHECK_THROWS_AS(parse_mode("some"), std::invalid_argument);
}

TEST_CASE("greedy evaluation is deterministic, read-only and finishes its last episode") {
  pipeline::TrainConfig c = testing::tiny_train_config();
  c.env.horizon = 40;
  pipeline::Trainer tr(c);
  const auto before = tr.to_checkpoint().serialize();
  const EvalReport a = run_eval(tr, sim::Task::LF, sim::LayoutFamily::A, 300, 5);
  const EvalReport b = run_eval(tr, sim::Task::LF, sim::LayoutFamily::A, 300, 5);
  CHECK(tr.to_checkpoint().serialize() == before);
  CHECK(format_report_csv({a}) == format_report_csv({b}));
  REQUIRE_FALSE(a.episodes.empty());
  CHECK(a.total_steps >= 300);
  CHECK(a.total_steps - a.episodes.back().steps < 300);
  std::size_t steps = 0;
  for (const auto& ep : a.episodes) {
    CHECK(ep.steps >= 1);
    CHECK(ep.steps <= 40);
    CHECK(ep.events.contains(ep.reason));
    CHECK(ep.reason == ep.events.reason());
    steps += ep.steps;
  }
  CHECK(steps == a.total_steps);
  CHECK(a.sr() + a.ir() == 100.0);

  const EvalReport other = run_eval(tr, sim::Task::LF, sim::LayoutFamily::A, 300, 6);
  CHECK(other.episodes.front().seed != a.episodes.front().seed);
  CHECK_THROWS_AS(run_eval(tr, sim::Task::LF, sim::LayoutFamily::A, 0, 5), std::invalid_argument);
  CHECK_THROWS_AS(run_eval(tr, static_cast<sim::Task>(7), sim::LayoutFamily::A, 10, 5), std::invalid_argument);
  CHECK_THROWS_AS(run_eval(tr, sim::Task::LF, static_cast<sim::LayoutFamily>('C'), 10, 5), std::invalid_argument);
}

TEST_CASE("evaluation layouts differ per family and stay fixed per seed") {
  CHECK(eval_layout(sim::LayoutFamily::A, 3) == eval_layout(sim::LayoutFamily::A, 3));
  CHECK_FALSE(eval_layout(sim::LayoutFamily::A, 3) == eval_layout(sim::LayoutFamily::B, 3));
  CHECK(eval_layout(sim::LayoutFamily::B, 3).family() == sim::LayoutFamily::B);
}

TEST_CASE("transfer matrix ordering") {
  pipeline::TrainConfig c = testing::tiny_train_config();
  c.env.horizon = 30;
  pipeline::Trainer tr(c);
  const auto reports = transfer_matrix(tr, {sim::Task::LF}, {sim::LayoutFamily::A, sim::LayoutFamily::B}, 50, {2});
  REQUIRE(reports.size() == 2);
  CHECK(reports[0].layout == sim::LayoutFamily::A);
  CHECK(reports[1].layout == sim::LayoutFamily::B);
  CHECK(transfer_matrix(tr, {}, {sim::LayoutFamily::A}, 50, {1}).empty());
  const auto again = transfer_matrix(tr, {sim::Task::LF}, {sim::LayoutFamily::A, sim::LayoutFamily::B}, 50, {2});
  CHECK(format_report_csv(again) == format_report_csv(reports));
}

TEST_CASE("zero-shot fine-tuning runs no optimizer steps") {
  pipeline::TrainConfig c = testing::tiny_train_config();
  c.n_explore = 80;
  c.env.horizon = 30;
  pipeline::Trainer tr(c);
  tr.run_explore();
  const std::uint64_t steps = tr.optimizer_steps();
  const EvalReport r = finetune_phase(tr, sim::Task::CA, FinetuneMode::Zero, sim::LayoutFamily::A, 60, 1);
  CHECK(tr.optimizer_steps() == steps);
  CHECK(r.task == sim::Task::CA);
  finetune_phase(tr, sim::Task::CA, FinetuneMode::Few, sim::LayoutFamily::A, 60, 1);
  CHECK(tr.optimizer_steps() > steps);
}

TEST_CASE("windowed reward rate matches a per-step expansion") {
  const std::vector<double> steps{100, 200, 300, 700, 1000, 1500};
  const std::vector<double> means{1.0, -2.0, 0.5, 3.0, 0.0, 1.25};
  for (std::size_t w : {1u, 50u, 150u, 500u, 2000u}) {
    const auto got = windowed_rate(steps, means, w);
    const auto want = brute_rate(steps, means, w);
    for (std::size_t i = 0; i < steps.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
  // Prefix rule: before the window fills, the mean covers what is available.
  const auto prefix = windowed_rate({100, 200}, {1.0, 3.0}, 500);
  CHECK(prefix[0] == 1.0);
  CHECK(prefix[1] == 2.0);
  CHECK_THROWS_AS(windowed_rate({100, 100}, {1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(windowed_rate({0}, {1}), std::invalid_argument);
}

TEST_CASE("reward-rate SVG") {
  const fs::path a = scratch("run_a.csv"), b = scratch("run_b.csv"), out = scratch("plot.svg");
  write_metrics(a, {{500, "explore", 0.5}, {1000, "explore", 0.5}, {1500, "explore", 0.5}});
  write_metrics(b, {{500, "explore", 0.1}, {1000, "finetune", 0.7}, {1500, "finetune", 0.9}});

  const RewardSeries flat = load_reward_series(a);
  for (double v : flat.rate) CHECK(v == 0.5);
  CHECK(flat.finetune_start < 0.0);
  const std::string one = render_reward_svg({flat});
  std::smatch m;
  REQUIRE(std::regex_search(one, m, std::regex("points=\"([^\"]*)\"")));
  std::regex pt("[0-9.]+,([0-9.]+)");
  std::set<std::string> ys;
  const std::string pts = m[1];
  for (auto it = std::sregex_iterator(pts.begin(), pts.end(), pt); it != std::sregex_iterator(); ++it) ys.insert((*it)[1]);
  CHECK(ys.size() == 1);
  CHECK(one.find("class=\"finetune\"") == std::string::npos);

  plot_reward_rate({a, b}, out);
  std::ifstream f(out);
  const std::string svg((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  CHECK(svg.rfind("<svg", 0) == 0);
  auto count = [&](const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = svg.find(needle); pos != std::string::npos; pos = svg.find(needle, pos + 1)) ++n;
    return n;
  };
  CHECK(count("class=\"legend\"") == 2);
  CHECK(count("class=\"series\"") == 2);
  CHECK(count("class=\"finetune\"") == 1);
  CHECK(svg.find(">run_a<") != std::string::npos);
  CHECK(svg.find(">run_b<") != std::string::npos);
  CHECK(render_reward_svg({load_reward_series(a), load_reward_series(b)}) == svg);
  CHECK(load_reward_series(b).finetune_start == 500.0);

  CHECK_THROWS(plot_reward_rate({scratch("missing.csv")}, out));
  const fs::path empty = scratch("empty.csv");
  std::ofstream(empty).close();
  CHECK_THROWS(plot_reward_rate({empty}, out));
  CHECK_THROWS(plot_reward_rate({}, out));
}

TEST_CASE("gradient oracle suite passes on a few trials") {
  const OracleSuite s = run_op_oracle(3, 1);
  CHECK(s.passed());
  CHECK(s.cases.size() >= 20);
  for (const auto& c : s.cases) CHECK(c.trials == 3);
  const OracleCase m = run_model_oracle(2, 2);
  CHECK(m.passed);
  CHECK(m.coords > 0);
}
