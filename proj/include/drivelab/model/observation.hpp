#pragma once

#include <vector>

#include "drivelab/model/rssm.hpp"
#include "drivelab/sim/env.hpp"

namespace drivelab::model {

/// Flattens stacked egocentric frames into one-hot embedding indices plus the
/// scalar channels, with the newest frame as reconstruction target.
ObsBatch make_obs_batch(const std::vector<const sim::EgoObservation*>& obs);
ObsBatch make_obs_batch(const sim::EgoObservation& obs);

/// Model config whose observation shape matches the simulator.
ModelConfig sim_model_config();

}  // namespace drivelab::model
