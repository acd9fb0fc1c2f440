#include "drivelab/model/observation.hpp"

namespace drivelab::model {

ObsBatch make_obs_batch(const std::vector<const sim::EgoObservation*>& obs) {
  constexpr std::size_t cells = sim::kCells, classes = sim::kClasses, frames = sim::kFrames;
  ObsBatch b;
  b.rows = obs.size();
  auto onehot = std::make_shared<std::vector<std::uint32_t>>(b.rows * frames * cells);
  auto target = std::make_shared<std::vector<std::uint8_t>>(b.rows * cells);
  b.scalars = Tensor(b.rows, 2);
  std::uint32_t* dst = onehot->data();
  for (std::size_t r = 0; r < b.rows; ++r) {
    const sim::EgoObservation& o = *obs[r];
    for (std::size_t f = 0; f < frames; ++f) {
      const std::uint32_t base = static_cast<std::uint32_t>(f * cells * classes);
      for (std::size_t c = 0; c < cells; ++c) {
        *dst++ = base + static_cast<std::uint32_t>(c * classes + o.frames[f][c]);
      }
    }
    std::copy(o.frames[frames - 1].begin(), o.frames[frames - 1].end(), target->begin() + static_cast<std::ptrdiff_t>(r * cells));
    b.scalars(r, 0) = o.speed_norm;
    b.scalars(r, 1) = o.prev_steer;
  }
  b.onehot = std::move(onehot);
  b.target = std::move(target);
  return b;
}

ObsBatch make_obs_batch(const sim::EgoObservation& obs) { return make_obs_batch(std::vector{&obs}); }

ModelConfig sim_model_config() {
  ModelConfig cfg;
  cfg.frames = sim::kFrames;
  cfg.classes = sim::kClasses;
  cfg.grid = sim::kGrid;
  cfg.scalars = 2;
  cfg.action_dim = 2;
  return cfg;
}

}  // namespace drivelab::model
