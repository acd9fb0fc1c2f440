#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "drivelab/diff/layers.hpp"
#include "drivelab/diff/rng.hpp"

namespace drivelab::model {

using diff::Mode;
using diff::ParamList;
using diff::Parameter;
using diff::Rng;
using diff::Tape;
using diff::Tensor;
using diff::Var;

struct ModelConfig {
  std::size_t deter = 128;  // D_h
  std::size_t stoch = 32;   // D_z
  std::size_t embed = 128;
  std::size_t hidden = 128;          // hidden width of posterior, prior and head MLPs
  std::size_t decoder_hidden = 128;
  std::size_t frames = 4;
  std::size_t classes = 6;
  std::size_t grid = 32;
  std::size_t scalars = 2;  // speed_norm, prev_steer
  std::size_t action_dim = 2;
  double beta = 1.0;
  double free_bits = 1.0;
  double cont_weight = 1.0;
  double std_floor = 0.1;

  std::size_t cells() const { return grid * grid; }
  std::size_t feature() const { return deter + stoch; }
  /// Rows of the one-hot embedding table: one per (frame, cell, class).
  std::size_t onehot_rows() const { return frames * cells() * classes; }
  /// Active one-hot entries per observation: one per (frame, cell).
  std::size_t onehot_active() const { return frames * cells(); }
  void validate() const;
};

/// A batch of observations in the layout the encoder and decoder consume.
struct ObsBatch {
  std::size_t rows = 0;
  /// rows * onehot_active indices into the embedding table.
  std::shared_ptr<const std::vector<std::uint32_t>> onehot;
  /// rows x scalars.
  Tensor scalars;
  /// rows * cells class ids of the newest frame (reconstruction target).
  std::shared_ptr<const std::vector<std::uint8_t>> target;
};

/// B sequences of length T stored time-major: row t * B + b.
/// actions[t] is the action that led to obs[t]; rewards and continuation
/// flags belong to the arrival at obs[t].
struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  ObsBatch obs;
  Tensor actions;  // (T*B) x action_dim
  Tensor rewards;  // (T*B) x 1
  Tensor cont;     // (T*B) x 1, 1 = episode continues
};

struct Gaussian {
  Var mean;
  Var std;
};

/// Standard-normal noise drawn from an Rng, or replayed from a fixed list
/// (used to hold sampling noise constant across finite-difference probes).
class NoiseSource {
 public:
  explicit NoiseSource(Rng& rng) : rng_(&rng) {}
  explicit NoiseSource(std::vector<Tensor> fixed) : fixed_(std::move(fixed)) {}

  Tensor next(std::size_t rows, std::size_t cols);
  /// Every tensor handed out so far, in order.
  const std::vector<Tensor>& drawn() const { return drawn_; }
  void rewind() { cursor_ = 0; }

 private:
  Rng* rng_ = nullptr;
  std::vector<Tensor> fixed_;
  std::size_t cursor_ = 0;
  std::vector<Tensor> drawn_;
};

struct ModelLossBreakdown {
  double recon_nll = 0.0;
  double reward_nll = 0.0;
  double kl_raw = 0.0;
  double kl_used = 0.0;
  double continuation_nll = 0.0;
  double total = 0.0;
};

struct ObserveResult {
  // Per time step, B rows each.
  std::vector<Var> h;
  std::vector<Var> z;
  std::vector<Var> post_mean;
  std::vector<Var> post_std;
  std::vector<Var> prior_mean;
  std::vector<Var> prior_std;
  Var total;
  ModelLossBreakdown losses;
};

class WorldModel {
 public:
  explicit WorldModel(const ModelConfig& cfg);

  void init(Rng& rng);
  const ModelConfig& config() const { return cfg_; }

  /// Observation embedding, rows x embed.
  Var embed(Tape& tape, const ObsBatch& obs, Mode mode);
  Gaussian posterior(Tape& tape, Var h, Var embedding, Mode mode);
  /// Posterior parameters from an observation and the current deterministic state.
  Gaussian encode(Tape& tape, const ObsBatch& obs, Var h, Mode mode);
  /// One GRU step over input [z_prev, a_prev].
  Var sequence_step(Tape& tape, Var h_prev, Var z_prev, Var a_prev, Mode mode);
  Gaussian prior(Tape& tape, Var h, Mode mode);
  /// Per-cell class logits of the newest frame, rows x (cells * classes).
  Var decode(Tape& tape, Var h, Var z, Mode mode);
  Var predict_reward(Tape& tape, Var h, Var z, Mode mode);
  Var continuation_logit(Tape& tape, Var h, Var z, Mode mode);

  /// Filtering pass from h0 = 0, z0 = 0 with the full training loss.
  ObserveResult observe_sequence(Tape& tape, const SequenceBatch& batch, NoiseSource& noise, Mode mode);

  ParamList parameters();
  ParamList reward_parameters() { return reward_.parameters(); }
  ParamList continuation_parameters() { return cont_.parameters(); }
  ParamList core_parameters();

 private:
  Gaussian split_stats(Var stats);
  double embed_scale() const;

  ModelConfig cfg_;
  Parameter embed_w_;
  Parameter embed_b_;
  diff::Linear embed_scalar_;
  diff::Mlp posterior_;
  diff::Linear gates_;      // update and reset gates, 2 * deter outputs
  diff::Linear candidate_;
  diff::Mlp prior_;
  diff::Mlp decoder_;
  diff::Mlp reward_;
  diff::Mlp cont_;
};

/// Reward NLL under a unit-variance Gaussian with the constant dropped.
Var reward_nll(Var predicted, Var target);
/// max(kl, free_bits); below the floor the result is a constant with no gradient.
Var apply_free_bits(Var kl, double free_bits);
/// Bernoulli cross-entropy of continuation logits against 0/1 flags.
Var continuation_nll(Var logit, Var target);

}  // namespace drivelab::model
