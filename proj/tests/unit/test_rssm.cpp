#include <cmath>

#include "doctest.h"
#include "drivelab/diff/adam.hpp"
#include "drivelab/diff/gradcheck.hpp"
#include "drivelab/diff/ops.hpp"
#include "support/fixtures.hpp"

using namespace drivelab;
using namespace drivelab::model;
using diff::finite_diff_check;

namespace {

const double kStd0 = std::log(2.0) + 0.1;  // softplus(0) + floor

ObsBatch one_obs(std::uint64_t seed) {
  auto eps = testing::random_drive(1, 3, seed);
  return make_obs_batch(eps[0][2].obs);
}

}  // namespace

TEST_CASE("zero parameters: encoder and prior give mean 0, std softplus(0) + 0.1") {
  WorldModel wm(testing::small_model_config());
  diff::zero_values(wm.parameters());
  Tape t;
  const ObsBatch obs = one_obs(1);
  Var h = t.constant(Tensor(1, wm.config().deter, 0.3));
  const Gaussian post = wm.encode(t, obs, h, Mode::Train);
  const Gaussian pri = wm.prior(t, h, Mode::Train);
  for (std::size_t i = 0; i < wm.config().stoch; ++i) {
    CHECK(post.mean.value()[i] == 0.0);
    CHECK(pri.mean.value()[i] == 0.0);
    CHECK(post.std.value()[i] == doctest::Approx(kStd0).epsilon(1e-15));
    CHECK(pri.std.value()[i] == doctest::Approx(kStd0).epsilon(1e-15));
  }
  CHECK(std::abs(kStd0 - 0.793) < 5e-4);
  CHECK(diff::kl_diag_gaussians(post.mean, post.std, pri.mean, pri.std).item() == doctest::Approx(0.0));
  // Zero decoder gives uniform logits over the six classes.
  Var logits = wm.decode(t, h, post.mean, Mode::Train);
  CHECK(diff::cell_cross_entropy(logits, obs.target, 6).item() == doctest::Approx(std::log(6.0)).epsilon(1e-14));
}

TEST_CASE("zero parameters: GRU step halves the previous state") {
  WorldModel wm(testing::small_model_config());
  diff::zero_values(wm.parameters());
  const auto& c = wm.config();
  Tape t;
  Var z = t.constant(Tensor(1, c.stoch, 0.7));
  Var a = t.constant(Tensor(1, c.action_dim, -0.2));
  Var h0 = wm.sequence_step(t, t.constant(Tensor(1, c.deter)), z, a, Mode::Train);
  for (double v : h0.value().values()) CHECK(v == 0.0);
  Rng rng(4);
  Tensor v = rng.normal_tensor(1, c.deter);
  Var h1 = wm.sequence_step(t, t.constant(v), z, a, Mode::Train);
  for (std::size_t i = 0; i < c.deter; ++i) CHECK(h1.value()[i] == doctest::Approx(0.5 * v[i]).epsilon(1e-15));
}

TEST_CASE("encoder is deterministic and separates different observations") {
  WorldModel wm(testing::small_model_config());
  Rng rng(8);
  wm.init(rng);
  const ObsBatch a = one_obs(2), b = one_obs(3);
  Tape t;
  Var h = t.constant(Tensor(1, wm.config().deter));
  const Gaussian pa = wm.encode(t, a, h, Mode::Frozen);
  const Gaussian pa2 = wm.encode(t, a, h, Mode::Frozen);
  const Gaussian pb = wm.encode(t, b, h, Mode::Frozen);
  CHECK(pa.mean.value() == pa2.mean.value());
  CHECK(pa.std.value() == pa2.std.value());
  double diff = 0.0;
  for (std::size_t i = 0; i < wm.config().stoch; ++i) diff += std::abs(pa.mean.value()[i] - pb.mean.value()[i]);
  CHECK(diff > 1e-3);
  CHECK_THROWS_AS(wm.encode(t, a, t.constant(Tensor(1, 3)), Mode::Frozen), diff::ShapeError);
}

TEST_CASE("GRU step gradient of sum(h) matches finite differences") {
  WorldModel wm(testing::small_model_config());
  Rng rng(12);
  wm.init(rng);
  const auto& c = wm.config();
  const Tensor h = rng.normal_tensor(3, c.deter), z = rng.normal_tensor(3, c.stoch), a = rng.normal_tensor(3, 2);
  auto report = finite_diff_check(
      [&](Tape& t) {
        return diff::sum(wm.sequence_step(t, t.constant(h), t.constant(z), t.constant(a), Mode::Train));
      },
      wm.core_parameters(), {.rtol = 1e-6, .h = 1e-5, .max_coords_per_param = 20});
  CHECK(report.passed);
  CHECK(report.coords > 50);
}

TEST_CASE("KL between posterior and prior is differentiable in both heads") {
  WorldModel wm(testing::small_model_config());
  Rng rng(13);
  wm.init(rng);
  const ObsBatch obs = one_obs(5);
  const Tensor h = rng.normal_tensor(1, wm.config().deter);
  auto report = finite_diff_check(
      [&](Tape& t) {
        Var hv = t.constant(h);
        const Gaussian q = wm.encode(t, obs, hv, Mode::Train);
        const Gaussian p = wm.prior(t, hv, Mode::Train);
        return diff::sum(diff::kl_diag_gaussians(q.mean, q.std, p.mean, p.std));
      },
      wm.core_parameters(), {.rtol = 1e-6, .h = 1e-5, .max_coords_per_param = 6});
  CHECK(report.passed);
}

TEST_CASE("reward, continuation and free-bits closed forms") {
  Tape t;
  CHECK(reward_nll(t.constant(1.0), t.constant(1.0)).item() == 0.0);
  CHECK(reward_nll(t.constant(1.0), t.constant(3.0)).item() == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(continuation_nll(t.constant(0.0), t.constant(1.0)).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(continuation_nll(t.constant(0.0), t.constant(0.0)).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  Var low = t.variable(Tensor::scalar(0.4));
  Var clamped = apply_free_bits(low, 1.0);
  CHECK(clamped.item() == 1.0);
  t.backward(clamped);
  CHECK(t.grad(low)[0] == 0.0);
  Var high = t.variable(Tensor::scalar(2.3));
  Var kept = apply_free_bits(high, 1.0);
  CHECK(kept.item() == 2.3);
  t.backward(kept);
  CHECK(t.grad(high)[0] == 1.0);
}

TEST_CASE("observe_sequence: loss identity, floors and alignment errors") {
  ModelConfig cfg = testing::small_model_config();
  cfg.beta = 0.7;
  cfg.cont_weight = 1.3;
  WorldModel wm(cfg);
  Rng rng(21);
  wm.init(rng);
  const SequenceBatch batch = testing::pack(testing::random_drive(3, 6, 9), 6);
  Tape t;
  NoiseSource noise(rng);
  const ObserveResult r = wm.observe_sequence(t, batch, noise, Mode::Train);
  const ModelLossBreakdown& l = r.losses;
  CHECK(l.total == l.recon_nll + l.reward_nll + cfg.beta * l.kl_used + cfg.cont_weight * l.continuation_nll);
  CHECK(l.kl_raw >= 0.0);
  CHECK(l.kl_used >= cfg.free_bits);
  CHECK(l.kl_used == std::max(l.kl_raw, cfg.free_bits));
  CHECK(r.h.size() == 6);
  for (const Var& s : r.post_std) {
    for (double v : s.value().values()) CHECK(v >= cfg.std_floor);
  }
  for (const Var& s : r.prior_std) {
    for (double v : s.value().values()) CHECK(v >= cfg.std_floor);
  }

  SequenceBatch bad = batch;
  bad.rewards = Tensor(5, 1);
  CHECK_THROWS_AS(wm.observe_sequence(t, bad, noise, Mode::Train), std::invalid_argument);
  SequenceBatch short_seq = testing::pack(testing::random_drive(2, 1, 3), 1);
  CHECK_THROWS_AS(wm.observe_sequence(t, short_seq, noise, Mode::Train), std::invalid_argument);
}

TEST_CASE("observe_sequence is causal: a prefix reproduces the prefix states") {
  WorldModel wm(testing::small_model_config());
  Rng rng(31);
  wm.init(rng);
  const auto eps = testing::random_drive(2, 8, 17);
  const SequenceBatch full = testing::pack(eps, 8);
  const SequenceBatch prefix = testing::pack(eps, 5);
  Tape t1;
  NoiseSource n1(rng);
  const ObserveResult a = wm.observe_sequence(t1, full, n1, Mode::Frozen);
  Tape t2;
  NoiseSource n2(n1.drawn());
  const ObserveResult b = wm.observe_sequence(t2, prefix, n2, Mode::Frozen);
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(a.h[k].value() == b.h[k].value());
    CHECK(a.z[k].value() == b.z[k].value());
    CHECK(a.post_mean[k].value() == b.post_mean[k].value());
  }
}

TEST_CASE("full world-model loss passes a finite-difference spot check with fixed noise") {
  ModelConfig cfg = testing::small_model_config();
  cfg.free_bits = 0.0;  // keep the KL branch active so its gradient is exercised
  WorldModel wm(cfg);
  Rng rng(41);
  wm.init(rng);
  // Non-trivial heads so reward and continuation gradients are exercised.
  for (auto* p : wm.reward_parameters())
    for (double& v : p->value.values()) v = rng.uniform(-0.5, 0.5);
  for (auto* p : wm.continuation_parameters())
    for (double& v : p->value.values()) v = rng.uniform(-0.5, 0.5);
  const SequenceBatch batch = testing::pack(testing::random_drive(2, 4, 23), 4);
  Tape t0;
  NoiseSource draw(rng);
  wm.observe_sequence(t0, batch, draw, Mode::Frozen);
  const std::vector<Tensor> noise = draw.drawn();
  auto report = finite_diff_check(
      [&](Tape& t) {
        NoiseSource fixed(noise);
        return wm.observe_sequence(t, batch, fixed, Mode::Train).total;
      },
      wm.parameters(), {.rtol = 1e-5, .h = 1e-5, .max_coords_per_param = 4, .seed = 5});
  CHECK(report.coords >= 50);
  CHECK(report.passed);
  MESSAGE("full-model max relative error " << report.max_rel_error);
}

TEST_CASE("a few Adam steps on a fixed batch reduce the loss") {
  WorldModel wm(testing::small_model_config());
  Rng rng(51);
  wm.init(rng);
  const SequenceBatch batch = testing::pack(testing::random_drive(4, 5, 29), 5);
  diff::Adam opt(wm.parameters(), 1e-3);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 40; ++i) {
    Tape t;
    Rng noise_rng(7);
    NoiseSource noise(noise_rng);
    opt.zero_grad();
    const ObserveResult r = wm.observe_sequence(t, batch, noise, Mode::Train);
    t.backward(r.total);
    opt.step();
    if (i == 0) first = r.losses.total;
    last = r.losses.total;
  }
  CHECK(last < first);
}
