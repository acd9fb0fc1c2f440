#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"
#include "drivelab/pipeline/checkpoint.hpp"
#include "drivelab/pipeline/config.hpp"
#include "drivelab/pipeline/metrics.hpp"
#include "drivelab/pipeline/replay.hpp"
#include "drivelab/pipeline/trainer.hpp"
#include "support/fixtures.hpp"

using namespace drivelab;
using namespace drivelab::pipeline;
namespace fs = std::filesystem;

namespace {

sim::EgoObservation marked_obs(std::uint8_t mark) {
  sim::EgoObservation o;
  for (auto& f : o.frames) f.fill(mark);
  o.speed_norm = mark / 100.0;
  return o;
}

/// Buffer with one episode per entry of `lengths` (length counts the reset step).
ReplayBuffer buffer_with(const std::vector<std::size_t>& lengths, std::size_t capacity = 1000) {
  ReplayBuffer buf(capacity);
  std::uint8_t mark = 0;
  for (std::size_t n : lengths) {
    buf.begin_episode(marked_obs(mark++));
    for (std::size_t i = 1; i < n; ++i) {
      buf.append(marked_obs(mark++), {0.1 * static_cast<double>(i), 0.0}, {1.0, 2.0, 3.0}, true);
    }
  }
  return buf;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "drivelab_test_pipeline";
  fs::create_directories(dir);
  const fs::path p = dir / name;
  fs::remove(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<diff::Tensor> snapshot(const diff::ParamList& ps) {
  std::vector<diff::Tensor> out;
  for (auto* p : ps) out.push_back(p->value);
  return out;
}

bool same_values(const diff::ParamList& ps, const std::vector<diff::Tensor>& snap) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (!(ps[i]->value == snap[i])) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("replay buffer evicts whole oldest episodes") {
  ReplayBuffer buf = buffer_with({4, 4}, 10);
  CHECK(buf.size() == 8);
  buf.begin_episode(marked_obs(50));
  buf.append(marked_obs(51), {0, 0}, {}, true);
  CHECK(buf.size() == 10);
  CHECK(buf.episodes().size() == 3);
  buf.append(marked_obs(52), {0, 0}, {}, true);
  CHECK(buf.size() == 7);
  REQUIRE(buf.episodes().size() == 2);
  CHECK(buf.episodes().front().id == 1);
  CHECK(buf.episodes().front().steps.size() == 4);

  ReplayBuffer small(3);
  small.begin_episode(marked_obs(0));
  small.append(marked_obs(1), {0, 0}, {}, true);
  small.append(marked_obs(2), {0, 0}, {}, true);
  CHECK_THROWS_AS(small.append(marked_obs(3), {0, 0}, {}, true), std::length_error);
}

TEST_CASE("replay buffer rejects appends after termination") {
  ReplayBuffer buf(10);
  CHECK_THROWS_AS(buf.append(marked_obs(0), {0, 0}, {}, true), std::logic_error);
  buf.begin_episode(marked_obs(0));
  buf.append(marked_obs(1), {0, 0}, {}, false);
  CHECK_THROWS_AS(buf.append(marked_obs(2), {0, 0}, {}, true), std::logic_error);
}

TEST_CASE("sampled windows stay inside one episode") {
  const ReplayBuffer buf = buffer_with({2, 5, 3, 7});
  CHECK(buf.valid_windows(3) == 0 + 3 + 1 + 5);
  diff::Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    for (const SequenceRef& r : buf.sample(4, 3, rng)) {
      REQUIRE(r.episode < buf.episodes().size());
      CHECK(r.offset + 3 <= buf.episodes()[r.episode].steps.size());
    }
  }
  const model::SequenceBatch b = sample_batch(buf, 5, 3, rng, std::nullopt);
  CHECK(b.batch == 5);
  CHECK(b.length == 3);
  CHECK(b.actions.rows() == 15);
}

TEST_CASE("a single exact-length episode always yields the same window") {
  const ReplayBuffer buf = buffer_with({6});
  diff::Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    for (const SequenceRef& r : buf.sample(3, 6, rng)) CHECK(r == SequenceRef{0, 0});
  }
}

TEST_CASE("sampling before warm-up raises a descriptive error") {
  const ReplayBuffer buf = buffer_with({3, 4});
  diff::Rng rng(1);
  CHECK_THROWS_AS(sample_batch(buf, 2, 5, rng, std::nullopt), WarmupError);
  try {
    buf.sample(2, 5, rng);
  } catch (const WarmupError& e) {
    CHECK(std::string(e.what()).find("warm-up not met") != std::string::npos);
  }
  ReplayBuffer empty(10);
  CHECK_THROWS_AS(empty.sample(1, 1, rng), WarmupError);
}

TEST_CASE("window starts are uniform over (episode, offset) pairs") {
  // 3 + 1 + 6 = 10 windows of length 4.
  const ReplayBuffer buf = buffer_with({6, 4, 9});
  diff::Rng rng(2024);
  std::map<std::pair<std::size_t, std::size_t>, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const SequenceRef r = buf.sample(1, 4, rng)[0];
    ++counts[{r.episode, r.offset}];
  }
  REQUIRE(counts.size() == 10);
  const double expected = draws / 10.0, sigma = std::sqrt(draws * 0.1 * 0.9);
  for (const auto& [key, n] : counts) CHECK(std::abs(n - expected) <= 3.0 * sigma);
}

TEST_CASE("assembled batches use the requested reward column") {
  const ReplayBuffer buf = buffer_with({5});
  const std::vector<SequenceRef> refs{{0, 1}};
  const model::SequenceBatch none = buf.assemble(refs, 3, std::nullopt);
  const model::SequenceBatch ca = buf.assemble(refs, 3, sim::Task::CA);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(none.rewards[t] == 0.0);
    CHECK(ca.rewards[t] == 2.0);
    CHECK(ca.actions(t, 0) == doctest::Approx(0.1 * static_cast<double>(t + 1)));
  }
  CHECK_THROWS_AS(buf.assemble({{0, 3}}, 3, std::nullopt), std::out_of_range);
}

TEST_CASE("frame stacks are rebuilt exactly from stored frames") {
  sim::DriveEnv env(sim::randomize(sim::LayoutFamily::A, 5));
  ReplayBuffer buf(1000);
  diff::Rng rng(5);
  std::vector<sim::EgoObservation> seen{env.reset(77)};
  buf.begin_episode(seen.back());
  for (int i = 0; i < 30 && !env.done(); ++i) {
    const sim::StepOutcome o = env.step({rng.uniform(-0.3, 0.3), rng.uniform(0.0, 1.0)});
    buf.append(o.obs, {0.0, 0.0}, o.r_ext, !o.terminated);
    seen.push_back(o.obs);
  }
  for (std::size_t t = 0; t < seen.size(); ++t) CHECK(buf.observation(0, t) == seen[t]);
}

TEST_CASE("config text round-trips and rejects bad input") {
  TrainConfig c = testing::tiny_train_config();
  c.task = sim::Task::LF_CA;
  c.family = sim::LayoutFamily::B;
  c.agent.gamma = 0.97;
  c.ensemble.hidden = {7, 5};
  const TrainConfig back = parse_config(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.fingerprint() == c.fingerprint());
  CHECK(back.get("train.gamma") == "0.97");
  CHECK(back.get("train.task") == "LF+CA");

  CHECK(parse_config("# comment\n\ntrain.batch = 7  # trailing\n").batch == 7);
  try {
    parse_config("train.batch = 4\ntrain.nonsense = 1\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK(msg.find("train.nonsense") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("train.batch = -3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("train.lr_model = abc\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("train.alpha_explore = 1.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("train.task = XY\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("train.batch\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("ensemble.members = 1\n"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/drivelab.cfg"), ConfigError);
}

TEST_CASE("config fingerprint tracks network shapes only") {
  const TrainConfig base = testing::tiny_train_config();
  TrainConfig c = base;
  c.lr_model = 0.5;
  c.seed = 99;
  c.agent.horizon = 9;
  CHECK(c.fingerprint() == base.fingerprint());
  c.model.deter += 1;
  CHECK(c.fingerprint() != base.fingerprint());
  c = base;
  c.ensemble.members += 1;
  CHECK(c.fingerprint() != base.fingerprint());
}

TEST_CASE("checkpoint container round-trips and detects damage") {
  Checkpoint ck;
  ck.fingerprint = 1234;
  ck.put("w", diff::Tensor(2, 3, {1, 2, 3, 4, 5, -6.5}));
  ck.put_u64("n", {7, 8});
  ck.put_u8("b", {1, 2, 255});
  ck.put_f64("d", {0.25});
  const std::string bytes = ck.serialize();
  const Checkpoint back = Checkpoint::deserialize(bytes);
  CHECK(back.serialize() == bytes);
  CHECK(back.fingerprint == 1234);
  CHECK(back.tensor("w") == ck.tensor("w"));
  CHECK(back.u64("n") == std::vector<std::uint64_t>{7, 8});
  CHECK(back.u8("b") == std::vector<std::uint8_t>{1, 2, 255});
  CHECK(back.names() == std::vector<std::string>{"w", "n", "b", "d"});

  auto kind_of = [](const std::string& b) {
    try {
      Checkpoint::deserialize(b);
    } catch (const CheckpointError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };
  CHECK(kind_of(bytes.substr(0, bytes.size() - 5)) == static_cast<int>(CheckpointError::Kind::Corrupt));
  CHECK(kind_of(bytes.substr(0, 4)) == static_cast<int>(CheckpointError::Kind::Corrupt));
  std::string flipped = bytes;
  flipped[bytes.size() - 20] ^= 0x5a;
  CHECK(kind_of(flipped) == static_cast<int>(CheckpointError::Kind::Corrupt));
  std::string version = bytes;
  version[8] = static_cast<char>(kCheckpointVersion + 1);
  CHECK(kind_of(version) == static_cast<int>(CheckpointError::Kind::Version));
  std::string magic = bytes;
  magic[0] = 'X';
  CHECK(kind_of(magic) == static_cast<int>(CheckpointError::Kind::Corrupt));

  try {
    back.tensor("missing");
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == CheckpointError::Kind::Missing);
  }
  try {
    Checkpoint::load("/nonexistent/x.ckpt");
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == CheckpointError::Kind::Io);
  }
}

TEST_CASE("metrics rows format and parse") {
  MetricsRow r;
  r.step = 5;
  r.phase = "explore";
  r.task = "LF";
  r.r_ext_mean = 0.5;
  r.r_int_mean = 0.125;
  const std::string line = format_metrics_row(r);
  CHECK(line == "5,explore,LF,,,,,,,,0.125,0.5,,,");
  const fs::path p = scratch("fmt.csv");
  {
    MetricsLog log(p);
    log.write(r);
  }
  {
    MetricsLog again(p);  // existing file: no second header
    again.write(r);
  }
  const MetricsTable t = read_metrics(p);
  REQUIRE(t.step.size() == 2);
  CHECK(t.r_ext_mean[1] == 0.5);
  CHECK(t.r_int_mean[0] == 0.125);
  CHECK_THROWS(read_metrics(scratch("absent.csv")));
  const fs::path bad = scratch("bad.csv");
  std::ofstream(bad) << kMetricsHeader << "\n1,2\n";
  CHECK_THROWS(read_metrics(bad));
}

TEST_CASE("an empty exploration budget leaves everything untouched") {
  TrainConfig c = testing::tiny_train_config();
  c.n_explore = 0;
  Trainer tr(c);
  tr.run_explore();
  CHECK(tr.buffer().empty());
  CHECK(tr.optimizer_steps() == 0);
  CHECK(tr.counters().env_steps == 0);
}

TEST_CASE("exploration logs one row per interval and trains every component") {
  TrainConfig c = testing::tiny_train_config();
  const fs::path p = scratch("explore.csv");
  Trainer tr(c);
  tr.set_metrics(std::make_shared<MetricsLog>(p));
  const auto ens_before = snapshot(tr.ensemble().parameters());
  tr.run_explore();
  const MetricsTable t = read_metrics(p);
  REQUIRE(t.step.size() == 4);
  for (std::size_t i = 0; i < t.step.size(); ++i) {
    CHECK(t.step[i] == 50.0 * static_cast<double>(i + 1));
    CHECK(t.phase[i] == "explore");
  }
  // floor(0.1 * (200 - 20)) updates.
  CHECK(tr.counters().updates + tr.counters().skipped_updates == 18);
  CHECK(tr.counters().updates > 0);
  CHECK(tr.model_optimizer().steps() == tr.counters().updates);
  CHECK(tr.ensemble().optimizer(0).steps() == tr.counters().updates);
  CHECK(tr.agent().actor_optimizer().steps() == tr.counters().updates);
  CHECK_FALSE(same_values(tr.ensemble().parameters(), ens_before));
  CHECK(tr.buffer().size() == 200 + tr.counters().episodes);
  REQUIRE(tr.last_update());
  CHECK(tr.last_update()->loss_ensemble.has_value());
  CHECK(std::isfinite(tr.last_update()->model.total));
}

TEST_CASE("identical seeds give identical metrics logs") {
  TrainConfig c = testing::tiny_train_config();
  c.n_explore = 120;
  const fs::path a = scratch("det_a.csv"), b = scratch("det_b.csv");
  for (const auto& p : {a, b}) {
    Trainer tr(c);
    tr.set_metrics(std::make_shared<MetricsLog>(p));
    tr.run_explore();
  }
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(a).size() > std::string(kMetricsHeader).size() + 10);
}

TEST_CASE("zero-shot performs no optimizer steps and equals few-shot with no budget") {
  TrainConfig c = testing::tiny_train_config();
  c.n_explore = 100;
  Trainer zero(c);
  zero.run_explore();
  const std::uint64_t steps = zero.optimizer_steps();
  const auto params = snapshot(zero.all_parameters());

  c.n_fine = 0;
  Trainer few(c);
  few.run_explore();
  few.run_finetune(sim::Task::CA);
  CHECK(few.optimizer_steps() == steps);
  CHECK(same_values(few.all_parameters(), params));
  CHECK(few.phase() == Phase::Finetune);
  CHECK(few.task() == sim::Task::CA);
}

TEST_CASE("fine-tuning freezes the ensemble and trains the rest") {
  TrainConfig c = testing::tiny_train_config();
  c.n_explore = 100;
  c.n_fine = 100;
  const fs::path p = scratch("fine.csv");
  Trainer tr(c);
  tr.set_metrics(std::make_shared<MetricsLog>(p));
  tr.run_explore();
  const auto ens = snapshot(tr.ensemble().parameters());
  const auto wm = snapshot(tr.world_model().parameters());
  const auto pol = snapshot(tr.agent().policy_parameters());
  const std::uint64_t ens_steps = tr.ensemble().optimizer(0).steps();
  tr.run_finetune(sim::Task::LF);
  CHECK(same_values(tr.ensemble().parameters(), ens));
  CHECK(tr.ensemble().optimizer(0).steps() == ens_steps);
  CHECK_FALSE(same_values(tr.world_model().parameters(), wm));
  CHECK_FALSE(same_values(tr.agent().policy_parameters(), pol));
  REQUIRE(tr.last_update());
  CHECK_FALSE(tr.last_update()->loss_ensemble.has_value());

  const MetricsTable t = read_metrics(p);
  CHECK(t.phase.back() == "finetune");
  for (std::size_t i = 1; i < t.step.size(); ++i) CHECK(t.step[i] > t.step[i - 1]);
}

TEST_CASE("the intrinsic reward scale tracks exploration and stays fixed while fine-tuning") {
  TrainConfig c = testing::tiny_train_config();
  c.n_explore = 100;
  c.n_fine = 100;
  Trainer tr(c);
  CHECK(tr.to_checkpoint().f64("norm/r_int") == std::vector<double>{0.0});
  tr.run_explore();
  const double scale = tr.to_checkpoint().f64("norm/r_int").at(0);
  CHECK(scale > 0.0);
  CHECK(std::isfinite(scale));
  tr.run_finetune(sim::Task::LF);
  CHECK(tr.to_checkpoint().f64("norm/r_int").at(0) == scale);
}

TEST_CASE("resuming from a checkpoint reproduces an uninterrupted run bitwise") {
  TrainConfig c = testing::tiny_train_config();
  const fs::path ckpt = scratch("resume.ckpt");

  Trainer straight(c);
  straight.advance(137);  // mid-episode and mid-chunk
  straight.save(ckpt);
  straight.advance(100);

  auto resumed = Trainer::load(ckpt, c);
  CHECK(resumed->counters().env_steps == 137);
  resumed->advance(100);

  CHECK(resumed->counters() == straight.counters());
  CHECK(resumed->env().state() == straight.env().state());
  CHECK(resumed->buffer().size() == straight.buffer().size());
  const auto a = resumed->all_parameters(), b = straight.all_parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->value == b[i]->value);
  CHECK(resumed->to_checkpoint().serialize() == straight.to_checkpoint().serialize());
}

TEST_CASE("trainer checkpoints save and load byte-identically") {
  TrainConfig c = testing::tiny_train_config();
  c.n_explore = 80;
  Trainer tr(c);
  tr.run_explore();
  const fs::path p1 = scratch("a.ckpt"), p2 = scratch("b.ckpt");
  tr.save(p1);
  Trainer::load(p1, c)->save(p2);
  CHECK(slurp(p1) == slurp(p2));

  TrainConfig other = c;
  other.model.deter += 4;
  try {
    Trainer::load(p1, other);
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == CheckpointError::Kind::Fingerprint);
  }
}

TEST_CASE("layouts change only at episode resets after the randomization period") {
  TrainConfig c = testing::tiny_train_config();
  c.env.randomization_period = 40;
  Trainer tr(c);
  CHECK(tr.env().layout() == Trainer::layout_for(c, 0));
  std::uint64_t last_episode = 0;
  sim::TrackLayout current = tr.env().layout();
  for (int i = 0; i < 400; ++i) {
    tr.step();
    if (tr.counters().episodes != last_episode) {
      last_episode = tr.counters().episodes;
      current = tr.env().layout();
    }
    CHECK(tr.env().layout() == current);
  }
  CHECK(tr.counters().layout_index == 10);
  CHECK(Trainer::layout_for(c, 1) == Trainer::layout_for(c, 1));
  CHECK_FALSE(Trainer::layout_for(c, 1) == Trainer::layout_for(c, 2));
}
