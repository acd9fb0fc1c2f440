#include "drivelab/pipeline/replay.hpp"

#include <algorithm>
#include <string>

#include "drivelab/model/observation.hpp"

namespace drivelab::pipeline {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::begin_episode(const sim::EgoObservation& obs) {
  Episode ep;
  ep.id = next_id_++;
  ep.steps.push_back(Step{obs.frames.back(), obs.speed_norm, obs.prev_steer, {0.0, 0.0}, {}, true});
  episodes_.push_back(std::move(ep));
  ++size_;
  evict();
}

void ReplayBuffer::append(const sim::EgoObservation& obs, std::array<double, 2> action,
                          const std::array<double, sim::kNumTasks>& r_ext, bool cont) {
  if (episodes_.empty()) throw std::logic_error("ReplayBuffer::append: no open episode");
  Episode& ep = episodes_.back();
  if (!ep.steps.back().cont) throw std::logic_error("ReplayBuffer::append: episode already terminated");
  ep.steps.push_back(Step{obs.frames.back(), obs.speed_norm, obs.prev_steer, action, r_ext, cont});
  ++size_;
  evict();
}

void ReplayBuffer::evict() {
  // The open episode is the newest and never longer than the capacity in
  // practice; eviction only ever drops whole older episodes.
  while (size_ > capacity_ && episodes_.size() > 1) {
    size_ -= episodes_.front().steps.size();
    episodes_.pop_front();
  }
  if (size_ > capacity_) throw std::length_error("ReplayBuffer: a single episode exceeds the capacity");
}

void ReplayBuffer::clear() {
  episodes_.clear();
  size_ = 0;
}

void ReplayBuffer::restore(std::deque<Episode> episodes, std::uint64_t next_id) {
  episodes_ = std::move(episodes);
  next_id_ = next_id;
  size_ = 0;
  for (const auto& e : episodes_) size_ += e.steps.size();
  if (size_ > capacity_) throw std::length_error("ReplayBuffer::restore: data exceeds the capacity");
}

sim::EgoObservation ReplayBuffer::observation(std::size_t episode, std::size_t step) const {
  const Episode& ep = episodes_.at(episode);
  const Step& s = ep.steps.at(step);
  sim::EgoObservation o;
  for (std::size_t f = 0; f < sim::kFrames; ++f) {
    const std::size_t back = sim::kFrames - 1 - f;
    o.frames[f] = ep.steps[step >= back ? step - back : 0].frame;
  }
  o.speed_norm = s.speed_norm;
  o.prev_steer = s.prev_steer;
  return o;
}

TransitionRecord ReplayBuffer::record(std::size_t episode, std::size_t step) const {
  const Episode& ep = episodes_.at(episode);
  const Step& s = ep.steps.at(step);
  TransitionRecord r;
  r.obs = observation(episode, step);
  r.action = s.action;
  r.r_ext = s.r_ext;
  r.cont = s.cont;
  r.episode = ep.id;
  r.step = static_cast<std::uint32_t>(step);
  return r;
}

std::size_t ReplayBuffer::valid_windows(std::size_t length) const {
  std::size_t n = 0;
  for (const auto& e : episodes_) {
    if (e.steps.size() >= length) n += e.steps.size() - length + 1;
  }
  return n;
}

std::vector<SequenceRef> ReplayBuffer::sample(std::size_t batch, std::size_t length, diff::Rng& rng) const {
  if (length == 0 || batch == 0) throw std::invalid_argument("sample: batch and length must be positive");
  const std::size_t total = valid_windows(length);
  if (total == 0) {
    throw WarmupError("warm-up not met: no stored episode has " + std::to_string(length) + " steps (" +
                      std::to_string(size_) + " transitions in " + std::to_string(episodes_.size()) + " episodes)");
  }
  std::vector<SequenceRef> out;
  out.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t k = rng.index(total);
    for (std::size_t e = 0; e < episodes_.size(); ++e) {
      const std::size_t n = episodes_[e].steps.size();
      if (n < length) continue;
      const std::size_t w = n - length + 1;
      if (k < w) {
        out.push_back({e, k});
        break;
      }
      k -= w;
    }
  }
  return out;
}

model::SequenceBatch ReplayBuffer::assemble(const std::vector<SequenceRef>& refs, std::size_t length,
                                            std::optional<sim::Task> task) const {
  const std::size_t B = refs.size();
  for (const auto& r : refs) {
    if (r.episode >= episodes_.size() || r.offset + length > episodes_[r.episode].steps.size()) {
      throw std::out_of_range("assemble: window outside its episode");
    }
  }
  std::vector<sim::EgoObservation> obs(B * length);
  model::SequenceBatch batch;
  batch.batch = B;
  batch.length = length;
  batch.actions = diff::Tensor(B * length, 2);
  batch.rewards = diff::Tensor(B * length, 1);
  batch.cont = diff::Tensor(B * length, 1);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t row = t * B + b;
      const std::size_t step = refs[b].offset + t;
      const Step& s = episodes_[refs[b].episode].steps[step];
      obs[row] = observation(refs[b].episode, step);
      batch.actions(row, 0) = s.action[0];
      batch.actions(row, 1) = s.action[1];
      batch.rewards[row] = task ? s.r_ext[static_cast<std::size_t>(*task)] : 0.0;
      batch.cont[row] = s.cont ? 1.0 : 0.0;
    }
  }
  std::vector<const sim::EgoObservation*> ptrs(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) ptrs[i] = &obs[i];
  batch.obs = model::make_obs_batch(ptrs);
  return batch;
}

model::SequenceBatch sample_batch(const ReplayBuffer& buffer, std::size_t batch, std::size_t length, diff::Rng& rng,
                                  std::optional<sim::Task> task) {
  return buffer.assemble(buffer.sample(batch, length, rng), length, task);
}

}  // namespace drivelab::pipeline
