#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "drivelab/diff/gradcheck.hpp"
#include "drivelab/diff/ops.hpp"
#include "drivelab/model/ensemble.hpp"

using namespace drivelab;
using namespace drivelab::diff;
using model::Ensemble;
using model::EnsembleConfig;

namespace {

// Two-pass population variance per column, averaged over columns; written
// independently of the library version (E[x^2] - E[x]^2 form, long double).
double variance_oracle(const std::vector<std::vector<double>>& rows) {
  const std::size_t K = rows.size(), D = rows[0].size();
  long double acc = 0.0L;
  for (std::size_t d = 0; d < D; ++d) {
    long double s = 0.0L, s2 = 0.0L;
    for (const auto& r : rows) {
      s += r[d];
      s2 += static_cast<long double>(r[d]) * r[d];
    }
    acc += s2 / K - (s / K) * (s / K);
  }
  return static_cast<double>(acc / D);
}

Tensor to_tensor(const std::vector<std::vector<double>>& rows) {
  Tensor t(rows.size(), rows[0].size());
  for (std::size_t k = 0; k < rows.size(); ++k)
    for (std::size_t d = 0; d < rows[0].size(); ++d) t(k, d) = rows[k][d];
  return t;
}

double tape_disagreement(const std::vector<std::vector<double>>& rows) {
  Tape t;
  std::vector<Var> preds;
  for (const auto& r : rows) preds.push_back(t.constant(Tensor(1, r.size(), r)));
  return model::disagreement(preds).item();
}

EnsembleConfig small(std::size_t k = 4) {
  EnsembleConfig c;
  c.members = k;
  c.hidden = {16};
  return c;
}

}  // namespace

TEST_CASE("disagreement closed-form cases") {
  const std::vector<std::vector<double>> equal{{1.5, -2.0}, {1.5, -2.0}, {1.5, -2.0}};
  const std::vector<std::vector<double>> pair{{0.0}, {2.0}};
  const std::vector<std::vector<double>> four{{0, 0}, {1, 1}, {2, 0}, {3, 1}};
  CHECK(model::disagreement(to_tensor(equal)) == 0.0);
  CHECK(tape_disagreement(equal) == 0.0);
  CHECK(std::abs(model::disagreement(to_tensor(pair)) - 1.0) <= 1e-12);
  CHECK(std::abs(tape_disagreement(pair) - 1.0) <= 1e-12);
  CHECK(std::abs(variance_oracle(four) - 0.75) <= 1e-12);
  CHECK(std::abs(model::disagreement(to_tensor(four)) - 0.75) <= 1e-12);
  CHECK(std::abs(tape_disagreement(four) - 0.75) <= 1e-12);
  CHECK_THROWS_AS(model::disagreement(to_tensor({{1.0, 2.0}})), std::invalid_argument);
}

TEST_CASE("disagreement properties on random predictions") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t K = 2 + rng.index(7), D = 1 + rng.index(6);
    std::vector<std::vector<double>> rows(K, std::vector<double>(D));
    for (auto& r : rows)
      for (double& v : r) v = rng.uniform(-3.0, 3.0);
    const double d = model::disagreement(to_tensor(rows));
    REQUIRE(d > 0.0);
    CHECK(d == doctest::Approx(variance_oracle(rows)).epsilon(1e-10));
    CHECK(tape_disagreement(rows) == doctest::Approx(d).epsilon(1e-12));
    auto perm = rows;
    std::reverse(perm.begin(), perm.end());
    std::swap(perm[0], perm[K / 2]);
    CHECK(model::disagreement(to_tensor(perm)) == doctest::Approx(d).epsilon(1e-12));
    auto scaled = rows;
    const double c = rng.uniform(-4.0, 4.0);
    for (auto& r : scaled)
      for (double& v : r) v *= c;
    CHECK(model::disagreement(to_tensor(scaled)) == doctest::Approx(c * c * d).epsilon(1e-10));
  }
}

TEST_CASE("predict_all: identical members agree, distinct seeds differ, calls are deterministic") {
  Ensemble ens(6, 2, 3, small(4));
  ens.init(1);
  Rng rng(2);
  const Tensor f = rng.normal_tensor(5, 6), a = rng.normal_tensor(5, 2);
  {
    Tape t;
    auto p = ens.predict_all(t, t.constant(f), t.constant(a), Mode::Frozen);
    REQUIRE(p.size() == 4);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = i + 1; j < 4; ++j) CHECK_FALSE(p[i].value() == p[j].value());
    auto again = ens.predict_all(t, t.constant(f), t.constant(a), Mode::Frozen);
    for (std::size_t i = 0; i < 4; ++i) CHECK(p[i].value() == again[i].value());
    CHECK_THROWS_AS(ens.predict_all(t, t.constant(Tensor(5, 4)), t.constant(a), Mode::Frozen), ShapeError);
  }
  // Identical-member fixture: copy member 0 into every member.
  for (std::size_t k = 1; k < ens.size(); ++k) {
    auto src = ens.member_parameters(0), dst = ens.member_parameters(k);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
  }
  for (double r : ens.intrinsic_reward(f, a)) CHECK(r == 0.0);
}

TEST_CASE("intrinsic reward is non-negative and matches the plain version") {
  Ensemble ens(6, 2, 3, small(5));
  ens.init(9);
  Rng rng(4);
  const Tensor f = rng.normal_tensor(20, 6), a = rng.normal_tensor(20, 2);
  const std::vector<double> plain = ens.intrinsic_reward(f, a);
  Tape t;
  Var r = ens.intrinsic_reward(t, t.constant(f), t.constant(a), Mode::Frozen);
  REQUIRE(r.rows() == 20);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(plain[i] > 0.0);
    CHECK(r.value()[i] == plain[i]);
  }
}

TEST_CASE("ensemble loss: exact member contributes zero; single-transition fit") {
  EnsembleConfig cfg;  // default widths and learning rate
  cfg.members = 3;
  Ensemble ens(4, 2, 3, cfg);
  ens.init(5);
  Rng rng(6);
  const Tensor f = rng.normal_tensor(1, 4), a = rng.normal_tensor(1, 2);
  {
    Tape t;
    auto p = ens.predict_all(t, t.constant(f), t.constant(a), Mode::Frozen);
    const Tensor target = p[1].value();
    Tape t2;
    Var total = ens.loss(t2, t2.constant(f), t2.constant(a), target);
    double others = 0.0;
    for (std::size_t k : {0u, 2u}) {
      double mse = 0.0;
      for (std::size_t d = 0; d < 3; ++d) mse += std::pow(p[k].value()[d] - target[d], 2);
      others += mse / 3.0;
    }
    CHECK(total.item() == doctest::Approx(others).epsilon(1e-12));
  }
  const Tensor target = rng.normal_tensor(1, 3);
  const double first = ens.train_step(f, a, target);
  double last = first;
  for (int i = 1; i < 200; ++i) last = ens.train_step(f, a, target);
  CHECK(last < 0.1 * first);
}

TEST_CASE("ensemble loss gradient on one member matches finite differences") {
  Ensemble ens(4, 2, 3, small(3));
  ens.init(7);
  Rng rng(8);
  const Tensor f = rng.normal_tensor(6, 4), a = rng.normal_tensor(6, 2), y = rng.normal_tensor(6, 3);
  auto report = finite_diff_check([&](Tape& t) { return ens.loss(t, t.constant(f), t.constant(a), y); },
                                  ens.member_parameters(1), {.rtol = 1e-6, .h = 1e-5});
  CHECK(report.passed);
}

TEST_CASE("updating one member leaves the others bitwise unchanged") {
  Ensemble ens(4, 2, 3, small(3));
  ens.init(11);
  Rng rng(12);
  const Tensor f = rng.normal_tensor(6, 4), a = rng.normal_tensor(6, 2), y = rng.normal_tensor(6, 3);
  std::vector<std::vector<Tensor>> before;
  for (std::size_t k = 0; k < 3; ++k) {
    before.emplace_back();
    for (auto* p : ens.member_parameters(k)) before.back().push_back(p->value);
  }
  for (std::size_t k = 0; k < 3; ++k) ens.optimizer(k).zero_grad();
  Tape t;
  t.backward(ens.loss(t, t.constant(f), t.constant(a), y));
  ens.optimizer(1).step();
  for (std::size_t k = 0; k < 3; ++k) {
    auto ps = ens.member_parameters(k);
    bool same = true;
    for (std::size_t i = 0; i < ps.size(); ++i) same = same && ps[i]->value == before[k][i];
    CHECK(same == (k != 1));
  }
}

TEST_CASE("members trained on one transition disagree less there than far away") {
  Ensemble ens(8, 2, 4, small(5));
  ens.init(21);
  Rng rng(22);
  const Tensor f = rng.normal_tensor(1, 8), a = rng.normal_tensor(1, 2), y = rng.normal_tensor(1, 4);
  for (int i = 0; i < 400; ++i) ens.train_step(f, a, y);
  const double seen = ens.intrinsic_reward(f, a)[0];
  Tensor far = rng.normal_tensor(1, 8);
  for (double& v : far.values()) v *= 3.0;
  const double unseen = ens.intrinsic_reward(far, rng.normal_tensor(1, 2))[0];
  CHECK(seen < unseen);
}

TEST_CASE("ensemble config validation") {
  EnsembleConfig c;
  c.members = 1;
  CHECK_THROWS_AS(Ensemble(4, 2, 3, c), std::invalid_argument);
}
