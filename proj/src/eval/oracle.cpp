#include "drivelab/eval/oracle.hpp"

#include <algorithm>
#include <chrono>
#include <functional>

#include "drivelab/diff/gradcheck.hpp"
#include "drivelab/diff/ops.hpp"
#include "drivelab/model/observation.hpp"
#include "drivelab/model/rssm.hpp"
#include "drivelab/sim/env.hpp"

namespace drivelab::eval {

using namespace diff;

namespace {

Parameter random_param(const std::string& name, std::size_t r, std::size_t c, Rng& rng, double lo = -2.0,
                       double hi = 2.0) {
  Parameter p(name, r, c);
  for (double& v : p.value.values()) v = rng.uniform(lo, hi);
  return p;
}

void record(OracleCase& c, const FiniteDiffReport& r) {
  ++c.trials;
  c.coords += r.coords;
  c.max_rel_error = std::max(c.max_rel_error, r.max_rel_error);
  c.passed = c.passed && r.passed;
}

/// B random-action episodes of length T packed time-major.
model::SequenceBatch random_sequences(std::size_t B, std::size_t T, std::uint64_t seed) {
  Rng rng(seed);
  sim::DriveEnv env(sim::randomize(sim::LayoutFamily::A, seed));
  std::vector<sim::EgoObservation> obs;
  model::SequenceBatch b;
  b.batch = B;
  b.length = T;
  b.actions = Tensor(B * T, 2);
  b.rewards = Tensor(B * T, 1);
  b.cont = Tensor(B * T, 1, 1.0);
  std::vector<std::vector<sim::EgoObservation>> eps;
  std::vector<std::vector<std::array<double, 3>>> extra;  // steer, accel, reward
  while (eps.size() < B) {
    std::vector<sim::EgoObservation> ep{env.reset(rng.next_u64())};
    std::vector<std::array<double, 3>> ex{{0.0, 0.0, 0.0}};
    while (ep.size() < T) {
      const sim::Action a{rng.uniform(-0.4, 0.4), rng.uniform(-0.2, 1.0)};
      const sim::StepOutcome o = env.step(a);
      if (o.terminated) break;
      ep.push_back(o.obs);
      ex.push_back({a.steer, a.accel, o.r_ext[0]});
    }
    if (ep.size() == T) {
      eps.push_back(std::move(ep));
      extra.push_back(std::move(ex));
    }
  }
  std::vector<const sim::EgoObservation*> ptrs;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < B; ++i) {
      const std::size_t row = t * B + i;
      ptrs.push_back(&eps[i][t]);
      b.actions(row, 0) = extra[i][t][0];
      b.actions(row, 1) = extra[i][t][1];
      b.rewards[row] = extra[i][t][2];
    }
  }
  b.obs = model::make_obs_batch(ptrs);
  return b;
}

}  // namespace

bool OracleSuite::passed() const {
  return std::all_of(cases.begin(), cases.end(), [](const OracleCase& c) { return c.passed; });
}

OracleSuite run_op_oracle(std::size_t trials, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(seed);
  const FiniteDiffOptions opts{.rtol = 1e-6, .h = 1e-5};
  OracleSuite suite;
  auto check = [&](const std::string& name, const LossBuilder& f, const ParamList& ps) {
    auto it = std::find_if(suite.cases.begin(), suite.cases.end(), [&](const OracleCase& c) { return c.name == name; });
    if (it == suite.cases.end()) {
      suite.cases.push_back({name, 0, 0, 0.0, opts.rtol, true});
      it = suite.cases.end() - 1;
    }
    record(*it, finite_diff_check(f, ps, opts));
  };
  for (std::size_t trial = 0; trial < trials; ++trial) {
    Parameter a = random_param("a", 2, 3, rng);
    Parameter b = random_param("b", 2, 3, rng);
    Parameter w = random_param("w", 3, 2, rng);
    Parameter bias = random_param("bias", 1, 2, rng);
    Parameter s = random_param("s", 1, 1, rng);
    Parameter pos = random_param("pos", 2, 3, rng, 0.2, 2.0);
    Parameter pos2 = random_param("pos2", 2, 3, rng, 0.2, 2.0);
    Parameter emb = random_param("emb", 8, 3, rng);
    Parameter emb_b = random_param("emb_b", 1, 3, rng);
    Parameter logits = random_param("logits", 2, 12, rng);
    const Tensor weights = rng.normal_tensor(2, 3);
    std::vector<std::uint32_t> idx(6);
    for (auto& i : idx) i = static_cast<std::uint32_t>(rng.index(8));
    auto onehot = std::make_shared<const std::vector<std::uint32_t>>(idx);
    std::vector<std::uint8_t> cls(8);
    for (auto& c : cls) c = static_cast<std::uint8_t>(rng.index(3));
    auto classes = std::make_shared<const std::vector<std::uint8_t>>(cls);
    auto wsum = [&](Tape& t, Var v) { return sum(mul(v, t.constant(weights))); };

    check("tanh", [&](Tape& t) { return wsum(t, tanh(t.param(a))); }, {&a});
    check("sigmoid", [&](Tape& t) { return wsum(t, sigmoid(t.param(a))); }, {&a});
    check("exp", [&](Tape& t) { return wsum(t, exp(t.param(a))); }, {&a});
    check("log", [&](Tape& t) { return wsum(t, log(t.param(pos))); }, {&pos});
    check("softplus", [&](Tape& t) { return wsum(t, softplus(t.param(a))); }, {&a});
    check("square", [&](Tape& t) { return wsum(t, square(t.param(a))); }, {&a});
    check("negate", [&](Tape& t) { return wsum(t, negate(t.param(a))); }, {&a});
    check("clamp", [&](Tape& t) { return wsum(t, clamp(t.param(a), -2.5, 2.5)); }, {&a});
    check("add", [&](Tape& t) { return wsum(t, t.param(a) + t.param(b)); }, {&a, &b});
    check("sub", [&](Tape& t) { return wsum(t, t.param(a) - t.param(b)); }, {&a, &b});
    check("mul", [&](Tape& t) { return wsum(t, t.param(a) * t.param(b)); }, {&a, &b});
    check("div", [&](Tape& t) { return wsum(t, t.param(a) / t.param(pos)); }, {&a, &pos});
    check("scalar_broadcast", [&](Tape& t) { return wsum(t, t.param(s) * t.param(a)); }, {&s, &a});
    check("scale/add_scalar", [&](Tape& t) { return wsum(t, 1.5 * t.param(a) + 0.25); }, {&a});
    check("matmul", [&](Tape& t) { return sum(square(matmul(t.param(a), t.param(w)))); }, {&a, &w});
    check("affine", [&](Tape& t) { return sum(square(affine(t.param(a), t.param(w), t.param(bias)))); },
          {&a, &w, &bias});
    check("gaussian_sample",
          [&](Tape& t) { return wsum(t, square(gaussian_sample(t.param(a), t.param(pos), t.param(b)))); },
          {&a, &pos, &b});
    check("kl_diag_gaussians",
          [&](Tape& t) { return sum(kl_diag_gaussians(t.param(a), t.param(pos), t.param(b), t.param(pos2))); },
          {&a, &pos, &b, &pos2});
    check("sum/mean", [&](Tape& t) { return square(mean(t.param(a))) + sum(t.param(b)); }, {&a, &b});
    check("row_sum", [&](Tape& t) { return sum(square(row_sum(t.param(a)))); }, {&a});
    check("row_mean", [&](Tape& t) { return sum(square(row_mean(t.param(a)))); }, {&a});
    check("concat_cols/slice_cols", [&](Tape& t) {
      Var c = concat_cols({t.param(a), t.param(b)});
      return sum(square(slice_cols(c, 2, 3)));
    }, {&a, &b});
    check("concat_rows/slice_rows", [&](Tape& t) {
      Var c = concat_rows({t.param(a), t.param(b), t.param(pos)});
      return wsum(t, square(slice_rows(c, 1, 2)));
    }, {&a, &b, &pos});
    check("detach", [&](Tape& t) { return wsum(t, t.param(a) * detach(t.param(b))); }, {&a});
    check("onehot_affine",
          [&](Tape& t) { return sum(square(onehot_affine(onehot, 3, t.param(emb), t.param(emb_b)))); },
          {&emb, &emb_b});
    check("cell_cross_entropy", [&](Tape& t) { return cell_cross_entropy(t.param(logits), classes, 3); }, {&logits});
  }
  suite.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return suite;
}

OracleCase run_model_oracle(std::size_t trials, std::uint64_t seed) {
  OracleCase c{"world_model_loss", 0, 0, 0.0, 1e-5, true};
  model::ModelConfig cfg = model::sim_model_config();
  cfg.deter = 12;
  cfg.stoch = 4;
  cfg.embed = 8;
  cfg.hidden = 8;
  cfg.decoder_hidden = 6;
  cfg.free_bits = 0.0;  // keep the KL branch differentiable
  Rng rng(seed);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    model::WorldModel wm(cfg);
    wm.init(rng);
    for (auto* p : wm.reward_parameters())
      for (double& v : p->value.values()) v = rng.uniform(-0.5, 0.5);
    for (auto* p : wm.continuation_parameters())
      for (double& v : p->value.values()) v = rng.uniform(-0.5, 0.5);
    const model::SequenceBatch batch = random_sequences(2, 3, rng.next_u64());
    Tape t0;
    model::NoiseSource draw(rng);
    wm.observe_sequence(t0, batch, draw, Mode::Frozen);
    const std::vector<Tensor> noise = draw.drawn();
    record(c, finite_diff_check(
                  [&](Tape& t) {
                    model::NoiseSource fixed(noise);
                    return wm.observe_sequence(t, batch, fixed, Mode::Train).total;
                  },
                  wm.parameters(), {.rtol = 1e-5, .h = 1e-5, .max_coords_per_param = 2, .seed = rng.next_u64()}));
  }
  return c;
}

}  // namespace drivelab::eval
