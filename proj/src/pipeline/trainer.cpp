#include "drivelab/pipeline/trainer.hpp"

#include <cmath>

#include "drivelab/diff/ops.hpp"
#include "drivelab/model/observation.hpp"

namespace drivelab::pipeline {

using diff::Mode;
using diff::Tape;
using diff::Tensor;
using diff::Var;

namespace {

constexpr double kIntrinsicDecay = 0.99;  // per update

Tensor hcat(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::copy(a.row_span(r).begin(), a.row_span(r).end(), out.row_span(r).begin());
    std::copy(b.row_span(r).begin(), b.row_span(r).end(), out.row_span(r).begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

/// Rows [begin, begin + count) of a stack of per-step tensors, each B rows.
Tensor stack_rows(const std::vector<Var>& steps, std::size_t first, std::size_t last) {
  const std::size_t B = steps.front().rows(), C = steps.front().cols();
  Tensor out((last - first) * B, C);
  for (std::size_t t = first; t < last; ++t) {
    const Tensor& v = steps[t].value();
    std::copy(v.values().begin(), v.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>((t - first) * B * C));
  }
  return out;
}

Tensor take_rows(const Tensor& src, std::size_t first, std::size_t count) {
  Tensor out(count, src.cols());
  std::copy(src.values().begin() + static_cast<std::ptrdiff_t>(first * src.cols()),
            src.values().begin() + static_cast<std::ptrdiff_t>((first + count) * src.cols()), out.values().begin());
  return out;
}

Tensor strided_rows(const Tensor& src, std::size_t n) {
  if (n == 0 || n >= src.rows()) return src;
  Tensor out(n, src.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = i * src.rows() / n;
    std::copy(src.row_span(r).begin(), src.row_span(r).end(), out.row_span(i).begin());
  }
  return out;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

TrainConfig validated(const TrainConfig& cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

std::string phase_name(Phase p) { return p == Phase::Explore ? "explore" : "finetune"; }

LatentFilter::LatentFilter(model::WorldModel& wm, agent::Agent& agent) : wm_(&wm), agent_(&agent) { reset(); }

void LatentFilter::reset() {
  h_ = Tensor(1, wm_->config().deter);
  z_ = Tensor(1, wm_->config().stoch);
  prev_ = {0.0, 0.0};
}

void LatentFilter::set_state(Tensor h, Tensor z, std::array<double, 2> prev) {
  if (h.rows() != 1 || h.cols() != wm_->config().deter || z.rows() != 1 || z.cols() != wm_->config().stoch) {
    throw diff::ShapeError("LatentFilter::set_state: state does not match the model");
  }
  h_ = std::move(h);
  z_ = std::move(z);
  prev_ = prev;
}

std::array<double, 2> LatentFilter::act(const sim::EgoObservation& obs, bool greedy, diff::Rng& rng) {
  Tape t;
  Var h = wm_->sequence_step(t, t.constant(h_), t.constant(z_), t.constant(Tensor(1, 2, {prev_[0], prev_[1]})),
                             Mode::Frozen);
  const model::Gaussian post = wm_->encode(t, model::make_obs_batch(obs), h, Mode::Frozen);
  h_ = h.value();
  if (greedy) {
    z_ = post.mean.value();
  } else {
    z_ = diff::gaussian_sample(post.mean, post.std, t.constant(rng.normal_tensor(1, wm_->config().stoch))).value();
  }
  const Tensor a = agent_->act(hcat(h_, z_), greedy, rng);
  prev_ = {a[0], a[1]};
  return prev_;
}

Trainer::Trainer(const TrainConfig& cfg)
    : cfg_(validated(cfg)),
      wm_(cfg_.model),
      ens_(cfg_.model.feature(), cfg_.model.action_dim, cfg_.model.stoch, cfg_.ensemble),
      agent_(cfg_.model.feature(), cfg_.model.action_dim, cfg_.agent),
      wm_opt_(wm_.parameters(), cfg_.lr_model, cfg_.grad_clip),
      buffer_(cfg_.capacity),
      env_(layout_for(cfg_, 0), cfg_.env),
      filter_(wm_, agent_) {
  diff::Rng root(cfg_.seed);
  diff::Rng init = root.split();
  wm_.init(init);
  ens_.init(root.next_u64());
  agent_.init(init);
  update_rng_ = root.split();
  act_rng_ = root.split();
  env_rng_ = root.split();
  task_ = cfg_.task;
  filter_.reset();
}

sim::TrackLayout Trainer::layout_for(const TrainConfig& cfg, std::uint64_t index) {
  return sim::randomize(cfg.family, splitmix64(cfg.layout_seed * 0x100000001b3ull + index), cfg.layout_params());
}

diff::ParamList Trainer::all_parameters() {
  diff::ParamList ps = wm_.parameters();
  diff::append(ps, ens_.parameters());
  diff::append(ps, agent_.parameters());
  return ps;
}

std::uint64_t Trainer::optimizer_steps() {
  std::uint64_t n = wm_opt_.steps() + agent_.actor_optimizer().steps() + agent_.critic_optimizer().steps();
  for (std::size_t k = 0; k < ens_.size(); ++k) n += ens_.optimizer(k).steps();
  return n;
}

void Trainer::start_episode() {
  if (counters_.pending_layout != 0) {
    env_.set_layout(layout_for(cfg_, counters_.layout_index));
    counters_.pending_layout = 0;
  }
  const sim::EgoObservation& obs = env_.reset(env_rng_.next_u64());
  buffer_.begin_episode(obs);
  filter_.reset();
  ++counters_.episodes;
}

void Trainer::step() {
  if (env_.done()) start_episode();
  const std::array<double, 2> a = filter_.act(env_.observation(), false, act_rng_);
  const sim::StepOutcome out = env_.step({a[0], a[1]});
  buffer_.append(out.obs, a, out.r_ext, !out.terminated);
  if (observer_) observer_(env_.vehicle());

  ++counters_.env_steps;
  ++counters_.phase_steps;
  ++counters_.chunk_pos;
  ++counters_.log_steps;
  log_r_ext_sum_ += out.r_ext[static_cast<std::size_t>(task_)];
  if (counters_.env_steps > cfg_.prefill) ++counters_.credited_steps;
  if (cfg_.env.randomization_period > 0 &&
      ++counters_.since_randomize >= static_cast<std::uint64_t>(cfg_.env.randomization_period)) {
    counters_.since_randomize = 0;
    ++counters_.layout_index;
    counters_.pending_layout = 1;
  }
  if (counters_.chunk_pos >= cfg_.chunk) {
    run_updates();
    counters_.chunk_pos = 0;
  }
  if (counters_.log_steps >= cfg_.log_every) log_row();
  if (cfg_.checkpoint_every > 0 && !checkpoint_path_.empty() && counters_.env_steps % cfg_.checkpoint_every == 0) {
    save(checkpoint_path_);
  }
}

void Trainer::advance(std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) step();
}

void Trainer::flush_updates() { run_updates(); }

void Trainer::run_updates() {
  const double ratio = phase_ == Phase::Explore ? cfg_.train_ratio : cfg_.train_ratio_finetune;
  const auto due = static_cast<std::uint64_t>(std::floor(static_cast<double>(counters_.credited_steps) * ratio + 1e-9));
  while (counters_.consumed_updates < due) {
    ++counters_.consumed_updates;
    try {
      last_update_ = update();
    } catch (const WarmupError&) {
      ++counters_.skipped_updates;
      continue;
    }
    ++counters_.updates;
    ++counters_.log_updates;
    const UpdateStats& s = *last_update_;
    const double vals[11] = {s.model.total, s.model.recon_nll, s.model.reward_nll, s.model.kl_raw, s.model.kl_used,
                             s.model.continuation_nll, s.loss_ensemble.value_or(0.0), s.r_int_mean, s.ac.actor_loss,
                             s.ac.critic_loss, s.ac.entropy};
    for (std::size_t i = 0; i < 11; ++i) log_sums_[i] += vals[i];
  }
}

agent::RewardFn Trainer::imagined_reward() {
  const double w = intrinsic_weight();
  return [this, w](Tape& t, const agent::ImagineStep& s) {
    Var r;
    bool have = false;
    if (w > 0.0) {
      Var ri = ens_.intrinsic_reward(t, diff::concat_cols({s.h, s.z}), s.action, Mode::Frozen);
      if (r_int_scale_ > 0.0) ri = ri * (1.0 / r_int_scale_);
      r = w == 1.0 ? ri : w * ri;
      have = true;
    }
    if (w < 1.0) {
      Var re = wm_.predict_reward(t, s.next_h, s.next_z, Mode::Frozen);
      Var e = w == 0.0 ? re : (1.0 - w) * re;
      r = have ? r + e : e;
    }
    return r;
  };
}

UpdateStats Trainer::update() {
  const bool explore = phase_ == Phase::Explore;
  const std::size_t B = cfg_.batch, L = cfg_.seq_len;
  const model::SequenceBatch batch =
      sample_batch(buffer_, B, L, update_rng_, explore ? std::nullopt : std::optional<sim::Task>(task_));
  UpdateStats st;
  Tensor hs, zs, feat, act, target;
  {
    Tape tape;
    model::NoiseSource noise(update_rng_);
    wm_opt_.zero_grad();
    const model::ObserveResult res = wm_.observe_sequence(tape, batch, noise, Mode::Train);
    tape.backward(res.total);
    wm_opt_.step();
    st.model = res.losses;

    hs = stack_rows(res.h, 0, L);
    zs = stack_rows(res.z, 0, L);
    // Transitions (s_t, a_{t+1}) -> posterior mean at t + 1, t = 0..L-2.
    feat = hcat(take_rows(hs, 0, (L - 1) * B), take_rows(zs, 0, (L - 1) * B));
    act = take_rows(batch.actions, B, (L - 1) * B);
    target = stack_rows(res.post_mean, 1, L);
  }
  const std::vector<double> r_int = ens_.intrinsic_reward(feat, act);
  double sum = 0.0;
  for (double v : r_int) sum += v;
  st.r_int_mean = sum / static_cast<double>(r_int.size());
  if (explore && st.r_int_mean > 0.0) {
    r_int_scale_ = r_int_scale_ == 0.0 ? st.r_int_mean
                                       : kIntrinsicDecay * r_int_scale_ + (1.0 - kIntrinsicDecay) * st.r_int_mean;
  }
  if (explore) st.loss_ensemble = ens_.train_step(feat, act, target);

  const Tensor h0 = strided_rows(hs, cfg_.imagine_starts), z0 = strided_rows(zs, cfg_.imagine_starts);
  Tape tape;
  const agent::ImaginedTrajectory traj =
      agent_.imagine(tape, wm_, h0, z0, agent_.config().horizon, imagined_reward(), explore, update_rng_);
  st.ac = agent_.update(tape, traj);
  return st;
}

void Trainer::log_row() {
  MetricsRow row;
  row.step = counters_.env_steps;
  row.phase = phase_name(phase_);
  row.task = sim::task_name(task_);
  if (counters_.log_updates > 0) {
    const double n = static_cast<double>(counters_.log_updates);
    std::optional<double>* cols[11] = {&row.loss_total, &row.loss_recon, &row.loss_reward, &row.kl_raw,
                                       &row.kl_used,    &row.loss_cont,  &row.loss_ensemble, &row.r_int_mean,
                                       &row.actor_loss, &row.critic_loss, &row.entropy};
    for (std::size_t i = 0; i < 11; ++i) *cols[i] = log_sums_[i] / n;
    if (phase_ != Phase::Explore) row.loss_ensemble.reset();
  }
  row.r_ext_mean = counters_.log_steps > 0 ? log_r_ext_sum_ / static_cast<double>(counters_.log_steps) : 0.0;
  if (metrics_) metrics_->write(row);
  counters_.log_steps = 0;
  counters_.log_updates = 0;
  log_r_ext_sum_ = 0.0;
  log_sums_.fill(0.0);
}

void Trainer::run_explore() {
  if (phase_ != Phase::Explore) throw std::logic_error("run_explore: trainer is already fine-tuning");
  while (counters_.phase_steps < cfg_.n_explore) step();
  flush_updates();
  if (counters_.log_steps > 0) log_row();
}

void Trainer::begin_finetune(sim::Task task) {
  flush_updates();
  if (counters_.log_steps > 0) log_row();
  phase_ = Phase::Finetune;
  task_ = task;
  counters_.phase_steps = 0;
  counters_.chunk_pos = 0;
  // Update credit restarts with the fine-tuning ratio; the prefill still
  // counts against total env steps.
  counters_.credited_steps = 0;
  counters_.consumed_updates = 0;
  // Start fine-tuning from a fresh episode.
  sim::EnvState s = env_.state();
  s.done = true;
  env_.set_state(s);
}

void Trainer::run_finetune(sim::Task task) {
  begin_finetune(task);
  while (counters_.phase_steps < cfg_.n_fine) step();
  flush_updates();
  if (counters_.log_steps > 0) log_row();
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

struct NamedOptimizer {
  std::string label;
  diff::Adam* opt;
};

std::vector<NamedOptimizer> optimizers(diff::Adam& wm, model::Ensemble& ens, agent::Agent& ag) {
  std::vector<NamedOptimizer> out{{"wm", &wm}};
  for (std::size_t k = 0; k < ens.size(); ++k) out.push_back({"ens." + std::to_string(k), &ens.optimizer(k)});
  out.push_back({"actor", &ag.actor_optimizer()});
  out.push_back({"critic", &ag.critic_optimizer()});
  return out;
}

std::vector<std::uint64_t> counters_words(const Counters& c) {
  return {c.env_steps,       c.phase_steps,     c.updates,        c.skipped_updates, c.episodes,
          c.chunk_pos,       c.layout_index,    c.since_randomize, c.pending_layout, c.log_steps,
          c.log_updates,     c.credited_steps,  c.consumed_updates};
}

Counters counters_from(const std::vector<std::uint64_t>& w) {
  if (w.size() != 13) throw CheckpointError(CheckpointError::Kind::Corrupt, "checkpoint: counters block has the wrong size");
  Counters c;
  c.env_steps = w[0];
  c.phase_steps = w[1];
  c.updates = w[2];
  c.skipped_updates = w[3];
  c.episodes = w[4];
  c.chunk_pos = w[5];
  c.layout_index = w[6];
  c.since_randomize = w[7];
  c.pending_layout = w[8];
  c.log_steps = w[9];
  c.log_updates = w[10];
  c.credited_steps = w[11];
  c.consumed_updates = w[12];
  return c;
}

}  // namespace

Checkpoint Trainer::to_checkpoint() {
  Checkpoint ck;
  ck.fingerprint = cfg_.fingerprint();
  const std::string text = cfg_.to_text();
  ck.put_u8("config", std::vector<std::uint8_t>(text.begin(), text.end()));

  for (auto* p : all_parameters()) ck.put("param/" + p->name, p->value);
  for (const auto& [label, opt] : optimizers(wm_opt_, ens_, agent_)) {
    const diff::AdamState& s = opt->state();
    ck.put_u64("adam/" + label + "/t", {s.t, s.m.size()});
    for (std::size_t i = 0; i < s.m.size(); ++i) {
      ck.put("adam/" + label + "/m/" + std::to_string(i), s.m[i]);
      ck.put("adam/" + label + "/v/" + std::to_string(i), s.v[i]);
    }
  }
  ck.put_u64("rng/update", update_rng_.state());
  ck.put_u64("rng/act", act_rng_.state());
  ck.put_u64("rng/env", env_rng_.state());
  ck.put_u64("counters", counters_words(counters_));
  ck.put_u64("phase", {static_cast<std::uint64_t>(phase_), static_cast<std::uint64_t>(task_)});
  std::vector<double> sums{log_r_ext_sum_};
  sums.insert(sums.end(), log_sums_.begin(), log_sums_.end());
  ck.put_f64("log/sums", sums);
  ck.put_f64("norm/r_int", {r_int_scale_});

  const sim::EnvState& es = env_.state();
  ck.put_f64("env/real", {es.vehicle.x, es.vehicle.y, es.vehicle.heading, es.vehicle.speed, es.arc, es.obs.speed_norm,
                          es.obs.prev_steer});
  ck.put_u64("env/int", {static_cast<std::uint64_t>(es.t), static_cast<std::uint64_t>(es.history.stall_steps),
                         static_cast<std::uint64_t>(es.history.wrong_way_steps), es.done ? 1u : 0u});
  std::vector<std::uint8_t> frames;
  for (const auto& f : es.obs.frames) frames.insert(frames.end(), f.begin(), f.end());
  ck.put_u8("env/frames", frames);

  ck.put("filter/h", filter_.h());
  ck.put("filter/z", filter_.z());
  ck.put_f64("filter/prev", {filter_.prev_action()[0], filter_.prev_action()[1]});

  std::vector<std::uint64_t> ids, lengths;
  std::vector<std::uint8_t> bframes, conts;
  std::vector<double> scalars;
  for (const auto& ep : buffer_.episodes()) {
    ids.push_back(ep.id);
    lengths.push_back(ep.steps.size());
    for (const auto& s : ep.steps) {
      bframes.insert(bframes.end(), s.frame.begin(), s.frame.end());
      scalars.insert(scalars.end(), {s.speed_norm, s.prev_steer, s.action[0], s.action[1]});
      scalars.insert(scalars.end(), s.r_ext.begin(), s.r_ext.end());
      conts.push_back(s.cont ? 1 : 0);
    }
  }
  ck.put_u64("buffer/meta", {buffer_.next_episode_id()});
  ck.put_u64("buffer/ids", ids);
  ck.put_u64("buffer/lengths", lengths);
  ck.put_u8("buffer/frames", bframes);
  ck.put_f64("buffer/scalars", scalars);
  ck.put_u8("buffer/cont", conts);
  return ck;
}

void Trainer::save(const std::filesystem::path& path) { to_checkpoint().save(path); }

void Trainer::restore(const Checkpoint& ck) {
  using K = CheckpointError::Kind;
  for (auto* p : all_parameters()) {
    Tensor t = ck.tensor("param/" + p->name);
    if (!t.same_shape(p->value)) throw CheckpointError(K::Corrupt, "checkpoint: shape mismatch for " + p->name);
    p->value = std::move(t);
  }
  for (const auto& [label, opt] : optimizers(wm_opt_, ens_, agent_)) {
    const auto tn = ck.u64("adam/" + label + "/t");
    if (tn.size() != 2) throw CheckpointError(K::Corrupt, "checkpoint: bad optimizer header for " + label);
    diff::AdamState& s = opt->state();
    s.t = tn[0];
    s.m.clear();
    s.v.clear();
    for (std::size_t i = 0; i < tn[1]; ++i) {
      s.m.push_back(ck.tensor("adam/" + label + "/m/" + std::to_string(i)));
      s.v.push_back(ck.tensor("adam/" + label + "/v/" + std::to_string(i)));
    }
  }
  update_rng_.set_state(ck.u64("rng/update"));
  act_rng_.set_state(ck.u64("rng/act"));
  env_rng_.set_state(ck.u64("rng/env"));
  counters_ = counters_from(ck.u64("counters"));
  const auto ph = ck.u64("phase");
  if (ph.size() != 2 || ph[0] > 1 || ph[1] >= sim::kNumTasks) throw CheckpointError(K::Corrupt, "checkpoint: bad phase block");
  phase_ = static_cast<Phase>(ph[0]);
  task_ = static_cast<sim::Task>(ph[1]);
  const auto norm = ck.f64("norm/r_int");
  if (norm.size() != 1) throw CheckpointError(K::Corrupt, "checkpoint: bad intrinsic scale block");
  r_int_scale_ = norm[0];
  const auto sums = ck.f64("log/sums");
  if (sums.size() != 1 + log_sums_.size()) throw CheckpointError(K::Corrupt, "checkpoint: bad log block");
  log_r_ext_sum_ = sums[0];
  std::copy(sums.begin() + 1, sums.end(), log_sums_.begin());

  // The env runs on the layout of the last reset; a pending layout waits.
  env_.set_layout(layout_for(cfg_, counters_.layout_index - counters_.pending_layout));
  sim::EnvState es;
  const auto real = ck.f64("env/real");
  const auto ints = ck.u64("env/int");
  const auto frames = ck.u8("env/frames");
  if (real.size() != 7 || ints.size() != 4 || frames.size() != sim::kFrames * sim::kCells) {
    throw CheckpointError(K::Corrupt, "checkpoint: bad env block");
  }
  es.vehicle = {real[0], real[1], real[2], real[3]};
  es.arc = real[4];
  es.obs.speed_norm = real[5];
  es.obs.prev_steer = real[6];
  es.t = static_cast<int>(ints[0]);
  es.history.stall_steps = static_cast<int>(ints[1]);
  es.history.wrong_way_steps = static_cast<int>(ints[2]);
  es.done = ints[3] != 0;
  for (std::size_t f = 0; f < sim::kFrames; ++f) {
    std::copy(frames.begin() + static_cast<std::ptrdiff_t>(f * sim::kCells),
              frames.begin() + static_cast<std::ptrdiff_t>((f + 1) * sim::kCells), es.obs.frames[f].begin());
  }
  env_.set_state(es);

  const auto prev = ck.f64("filter/prev");
  if (prev.size() != 2) throw CheckpointError(K::Corrupt, "checkpoint: bad filter block");
  filter_.set_state(ck.tensor("filter/h"), ck.tensor("filter/z"), {prev[0], prev[1]});

  const auto meta = ck.u64("buffer/meta");
  const auto ids = ck.u64("buffer/ids");
  const auto lengths = ck.u64("buffer/lengths");
  const auto bframes = ck.u8("buffer/frames");
  const auto scalars = ck.f64("buffer/scalars");
  const auto conts = ck.u8("buffer/cont");
  std::size_t total = 0;
  for (auto n : lengths) total += n;
  if (meta.size() != 1 || ids.size() != lengths.size() || bframes.size() != total * sim::kCells ||
      scalars.size() != total * 7 || conts.size() != total) {
    throw CheckpointError(K::Corrupt, "checkpoint: bad replay buffer block");
  }
  std::deque<ReplayBuffer::Episode> eps;
  std::size_t k = 0;
  for (std::size_t e = 0; e < ids.size(); ++e) {
    ReplayBuffer::Episode ep{ids[e], {}};
    ep.steps.resize(lengths[e]);
    for (auto& s : ep.steps) {
      std::copy(bframes.begin() + static_cast<std::ptrdiff_t>(k * sim::kCells),
                bframes.begin() + static_cast<std::ptrdiff_t>((k + 1) * sim::kCells), s.frame.begin());
      const double* x = scalars.data() + k * 7;
      s.speed_norm = x[0];
      s.prev_steer = x[1];
      s.action = {x[2], x[3]};
      s.r_ext = {x[4], x[5], x[6]};
      s.cont = conts[k] != 0;
      ++k;
    }
    eps.push_back(std::move(ep));
  }
  buffer_.restore(std::move(eps), meta[0]);
}

std::unique_ptr<Trainer> Trainer::from_checkpoint(const Checkpoint& ck, const TrainConfig& cfg) {
  if (ck.fingerprint != cfg.fingerprint()) {
    throw CheckpointError(CheckpointError::Kind::Fingerprint,
                          "checkpoint: config fingerprint mismatch (network shapes differ from the checkpoint)");
  }
  auto t = std::make_unique<Trainer>(cfg);
  t->restore(ck);
  return t;
}

TrainConfig stored_config(const Checkpoint& ck) {
  const auto bytes = ck.u8("config");
  return parse_config(std::string(bytes.begin(), bytes.end()));
}

std::unique_ptr<Trainer> Trainer::load(const std::filesystem::path& path, const TrainConfig& cfg) {
  return from_checkpoint(Checkpoint::load(path), cfg);
}

}  // namespace drivelab::pipeline
