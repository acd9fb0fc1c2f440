#pragma once

#include <vector>

#include "drivelab/diff/rng.hpp"
#include "drivelab/model/observation.hpp"
#include "drivelab/pipeline/config.hpp"
#include "drivelab/sim/env.hpp"

namespace drivelab::testing {

/// One recorded step: obs reached after `action`, with its reward and flag.
struct Step {
  sim::EgoObservation obs;
  sim::Action action;
  double reward = 0.0;
  double cont = 1.0;
};

/// Random-action driving on a family-A layout; episodes restart on termination.
inline std::vector<std::vector<Step>> random_drive(std::size_t episodes, std::size_t length, std::uint64_t seed) {
  diff::Rng rng(seed);
  sim::DriveEnv env(sim::randomize(sim::LayoutFamily::A, seed));
  std::vector<std::vector<Step>> out;
  while (out.size() < episodes) {
    std::vector<Step> ep;
    ep.push_back({env.reset(rng.next_u64()), {}, 0.0, 1.0});
    while (ep.size() < length) {
      const sim::Action a{rng.uniform(-0.4, 0.4), rng.uniform(-0.2, 1.0)};
      const sim::StepOutcome o = env.step(a);
      ep.push_back({o.obs, a, o.r_ext[0], o.terminated ? 0.0 : 1.0});
      if (o.terminated) break;
    }
    if (ep.size() == length) out.push_back(std::move(ep));
  }
  return out;
}

/// Packs equal-length episodes (one per sequence) into a time-major batch.
inline model::SequenceBatch pack(const std::vector<std::vector<Step>>& eps, std::size_t length) {
  model::SequenceBatch b;
  b.batch = eps.size();
  b.length = length;
  std::vector<const sim::EgoObservation*> ptrs;
  b.actions = diff::Tensor(b.batch * length, 2);
  b.rewards = diff::Tensor(b.batch * length, 1);
  b.cont = diff::Tensor(b.batch * length, 1);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < b.batch; ++i) {
      const Step& s = eps[i][t];
      const std::size_t row = t * b.batch + i;
      ptrs.push_back(&s.obs);
      b.actions(row, 0) = s.action.steer;
      b.actions(row, 1) = s.action.accel;
      b.rewards(row, 0) = s.reward;
      b.cont(row, 0) = s.cont;
    }
  }
  b.obs = model::make_obs_batch(ptrs);
  return b;
}

inline model::ModelConfig small_model_config() {
  model::ModelConfig cfg = model::sim_model_config();
  cfg.deter = 24;
  cfg.stoch = 8;
  cfg.embed = 16;
  cfg.hidden = 16;
  cfg.decoder_hidden = 12;
  return cfg;
}

/// Trainer config small enough to run a few hundred steps in a unit test.
inline pipeline::TrainConfig tiny_train_config() {
  pipeline::TrainConfig c;
  c.model = small_model_config();
  c.ensemble.members = 3;
  c.ensemble.hidden = {16};
  c.agent.hidden = {16};
  c.agent.horizon = 4;
  c.batch = 3;
  c.seq_len = 6;
  c.capacity = 2000;
  c.n_explore = 200;
  c.n_fine = 60;
  c.chunk = 25;
  c.train_ratio = 0.1;
  c.prefill = 20;
  c.log_every = 50;
  c.env.horizon = 150;
  c.env.randomization_period = 120;
  c.seed = 11;
  return c;
}

}  // namespace drivelab::testing
