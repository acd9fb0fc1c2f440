#include "drivelab/model/rssm.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "drivelab/diff/ops.hpp"

namespace drivelab::model {

using namespace diff;

void ModelConfig::validate() const {
  if (deter == 0 || stoch == 0 || embed == 0 || hidden == 0 || decoder_hidden == 0 || frames == 0 ||
      classes == 0 || grid == 0 || action_dim == 0) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (beta <= 0.0 || cont_weight < 0.0 || free_bits < 0.0 || std_floor <= 0.0) {
    throw std::invalid_argument("model loss weights out of range");
  }
}

Tensor NoiseSource::next(std::size_t rows, std::size_t cols) {
  Tensor t;
  if (rng_ != nullptr) {
    t = rng_->normal_tensor(rows, cols);
  } else {
    if (cursor_ >= fixed_.size()) throw std::out_of_range("NoiseSource: fixed noise exhausted");
    t = fixed_[cursor_++];
    if (t.rows() != rows || t.cols() != cols) {
      throw ShapeError("NoiseSource: fixed noise " + shape_string(t) + " does not match request [" +
                       std::to_string(rows) + "x" + std::to_string(cols) + "]");
    }
  }
  drawn_.push_back(t);
  return t;
}

WorldModel::WorldModel(const ModelConfig& cfg)
    : cfg_(cfg),
      embed_w_("wm.embed.w", cfg.onehot_rows(), cfg.embed),
      embed_b_("wm.embed.b", 1, cfg.embed),
      embed_scalar_("wm.embed_scalar", cfg.scalars, cfg.embed),
      posterior_("wm.posterior", {cfg.deter + cfg.embed, cfg.hidden, 2 * cfg.stoch}),
      gates_("wm.gru.gates", cfg.stoch + cfg.action_dim + cfg.deter, 2 * cfg.deter),
      candidate_("wm.gru.candidate", cfg.stoch + cfg.action_dim + cfg.deter, cfg.deter),
      prior_("wm.prior", {cfg.deter, cfg.hidden, 2 * cfg.stoch}),
      decoder_("wm.decoder", {cfg.feature(), cfg.decoder_hidden, cfg.cells() * cfg.classes}),
      reward_("wm.reward", {cfg.feature(), cfg.hidden, 1}),
      cont_("wm.cont", {cfg.feature(), cfg.hidden, 1}) {
  cfg_.validate();
}

void WorldModel::init(Rng& rng) {
  // Unit variance for the scaled sum of onehot_active table rows.
  const double a = std::sqrt(3.0 / static_cast<double>(cfg_.onehot_active())) / embed_scale();
  for (double& v : embed_w_.value.values()) v = rng.uniform(-a, a);
  embed_b_.value.fill(0.0);
  embed_scalar_.init(rng);
  posterior_.init(rng);
  gates_.init(rng);
  candidate_.init(rng);
  prior_.init(rng);
  decoder_.init(rng);
  reward_.init(rng, 0.0);
  cont_.init(rng, 0.0);
}

Gaussian WorldModel::split_stats(Var stats) {
  Var mean = slice_cols(stats, 0, cfg_.stoch);
  Var std = softplus(slice_cols(stats, cfg_.stoch, cfg_.stoch)) + cfg_.std_floor;
  return {mean, std};
}

// Every active row of an observation receives the same gradient, so Adam moves
// them together. Averaging instead of summing keeps that drift at one step size.
double WorldModel::embed_scale() const { return 1.0 / static_cast<double>(cfg_.onehot_active()); }

Var WorldModel::embed(Tape& tape, const ObsBatch& obs, Mode mode) {
  if (obs.onehot->size() != obs.rows * cfg_.onehot_active() || obs.scalars.rows() != obs.rows ||
      obs.scalars.cols() != cfg_.scalars) {
    throw ShapeError("embed: observation batch of " + std::to_string(obs.rows) + " rows does not match the model (" +
                     std::to_string(cfg_.onehot_active()) + " one-hot entries, " + std::to_string(cfg_.scalars) +
                     " scalars per row)");
  }
  Var grid = onehot_affine(obs.onehot, cfg_.onehot_active(), use(tape, embed_w_, mode), use(tape, embed_b_, mode)) *
             embed_scale();
  return tanh(grid + embed_scalar_(tape, tape.constant(obs.scalars), mode));
}

Gaussian WorldModel::posterior(Tape& tape, Var h, Var embedding, Mode mode) {
  if (h.cols() != cfg_.deter) throw ShapeError("posterior: h has " + std::to_string(h.cols()) + " columns");
  return split_stats(posterior_(tape, concat_cols({h, embedding}), mode));
}

Gaussian WorldModel::encode(Tape& tape, const ObsBatch& obs, Var h, Mode mode) {
  return posterior(tape, h, embed(tape, obs, mode), mode);
}

Var WorldModel::sequence_step(Tape& tape, Var h_prev, Var z_prev, Var a_prev, Mode mode) {
  if (h_prev.cols() != cfg_.deter || z_prev.cols() != cfg_.stoch || a_prev.cols() != cfg_.action_dim) {
    throw ShapeError("sequence_step: inputs do not match deter/stoch/action dims");
  }
  Var x = concat_cols({z_prev, a_prev});
  Var g = sigmoid(gates_(tape, concat_cols({x, h_prev}), mode));
  Var u = slice_cols(g, 0, cfg_.deter);
  Var r = slice_cols(g, cfg_.deter, cfg_.deter);
  Var c = tanh(candidate_(tape, concat_cols({x, r * h_prev}), mode));
  return u * h_prev + (1.0 - u) * c;
}

Gaussian WorldModel::prior(Tape& tape, Var h, Mode mode) { return split_stats(prior_(tape, h, mode)); }

Var WorldModel::decode(Tape& tape, Var h, Var z, Mode mode) { return decoder_(tape, concat_cols({h, z}), mode); }

Var WorldModel::predict_reward(Tape& tape, Var h, Var z, Mode mode) {
  return reward_(tape, concat_cols({h, z}), mode);
}

Var WorldModel::continuation_logit(Tape& tape, Var h, Var z, Mode mode) {
  return cont_(tape, concat_cols({h, z}), mode);
}

Var reward_nll(Var predicted, Var target) { return mean(0.5 * square(predicted - target)); }

Var apply_free_bits(Var kl, double free_bits) {
  if (!kl.value().is_scalar()) throw ShapeError("apply_free_bits: KL must be a scalar");
  return kl.item() >= free_bits ? kl : kl.tape().constant(free_bits);
}

Var continuation_nll(Var logit, Var target) { return mean(softplus(logit) - target * logit); }

ObserveResult WorldModel::observe_sequence(Tape& tape, const SequenceBatch& batch, NoiseSource& noise, Mode mode) {
  const std::size_t B = batch.batch, T = batch.length;
  const std::size_t rows = B * T;
  if (T < 2 || B == 0) throw std::invalid_argument("observe_sequence: need B >= 1 and T >= 2");
  if (batch.obs.rows != rows || batch.actions.rows() != rows || batch.actions.cols() != cfg_.action_dim ||
      batch.rewards.rows() != rows || batch.cont.rows() != rows || batch.obs.target->size() != rows * cfg_.cells()) {
    throw std::invalid_argument("observe_sequence: sequence components are not aligned to " + std::to_string(T) +
                                " steps x " + std::to_string(B) + " sequences");
  }

  Var embedded = embed(tape, batch.obs, mode);
  Var actions = tape.constant(batch.actions);
  Var h = tape.constant(Tensor(B, cfg_.deter));
  Var z = tape.constant(Tensor(B, cfg_.stoch));

  ObserveResult out;
  for (std::size_t t = 0; t < T; ++t) {
    h = sequence_step(tape, h, z, slice_rows(actions, t * B, B), mode);
    const Gaussian post = posterior(tape, h, slice_rows(embedded, t * B, B), mode);
    z = gaussian_sample(post.mean, post.std, tape.constant(noise.next(B, cfg_.stoch)));
    const Gaussian pri = prior(tape, h, mode);
    out.h.push_back(h);
    out.z.push_back(z);
    out.post_mean.push_back(post.mean);
    out.post_std.push_back(post.std);
    out.prior_mean.push_back(pri.mean);
    out.prior_std.push_back(pri.std);
  }

  Var hs = concat_rows(out.h);
  Var zs = concat_rows(out.z);
  Var recon = cell_cross_entropy(decode(tape, hs, zs, mode), batch.obs.target, cfg_.classes);
  Var rew = reward_nll(predict_reward(tape, hs, zs, mode), tape.constant(batch.rewards));
  Var cont = continuation_nll(continuation_logit(tape, hs, zs, mode), tape.constant(batch.cont));
  Var kl = mean(kl_diag_gaussians(concat_rows(out.post_mean), concat_rows(out.post_std), concat_rows(out.prior_mean),
                                  concat_rows(out.prior_std)));
  Var kl_used = apply_free_bits(kl, cfg_.free_bits);
  out.total = recon + rew + cfg_.beta * kl_used + cfg_.cont_weight * cont;

  out.losses.recon_nll = recon.item();
  out.losses.reward_nll = rew.item();
  out.losses.kl_raw = kl.item();
  out.losses.kl_used = kl_used.item();
  out.losses.continuation_nll = cont.item();
  out.losses.total = out.total.item();
  return out;
}

ParamList WorldModel::core_parameters() {
  ParamList ps{&embed_w_, &embed_b_};
  append(ps, embed_scalar_.parameters());
  append(ps, posterior_.parameters());
  append(ps, gates_.parameters());
  append(ps, candidate_.parameters());
  append(ps, prior_.parameters());
  append(ps, decoder_.parameters());
  return ps;
}

ParamList WorldModel::parameters() {
  ParamList ps = core_parameters();
  append(ps, reward_.parameters());
  append(ps, cont_.parameters());
  return ps;
}

}  // namespace drivelab::model
