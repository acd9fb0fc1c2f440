#include "drivelab/model/ensemble.hpp"

#include <stdexcept>
#include <string>

#include "drivelab/diff/ops.hpp"

namespace drivelab::model {

using namespace diff;

void EnsembleConfig::validate() const {
  if (members < 2) throw std::invalid_argument("ensemble needs at least 2 members, got " + std::to_string(members));
  if (lr < 0.0) throw std::invalid_argument("ensemble learning rate must be non-negative");
}

Ensemble::Ensemble(std::size_t feature_dim, std::size_t action_dim, std::size_t out_dim, EnsembleConfig cfg)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::vector<std::size_t> sizes{feature_dim + action_dim};
  sizes.insert(sizes.end(), cfg_.hidden.begin(), cfg_.hidden.end());
  sizes.push_back(out_dim);
  members_.reserve(cfg_.members);
  for (std::size_t k = 0; k < cfg_.members; ++k) members_.emplace_back("ens." + std::to_string(k), sizes);
  optimizers_.reserve(cfg_.members);
  for (auto& m : members_) optimizers_.emplace_back(m.parameters(), cfg_.lr);
}

void Ensemble::init(std::uint64_t seed) {
  Rng root(seed);
  for (auto& m : members_) {
    Rng r = root.split();
    m.init(r);
  }
}

std::vector<Var> Ensemble::predict_all(Tape& tape, Var feature, Var action, Mode mode) {
  Var x = concat_cols({feature, action});
  if (x.cols() != members_.front().in()) {
    throw ShapeError("predict_all: input has " + std::to_string(x.cols()) + " columns, members expect " +
                     std::to_string(members_.front().in()));
  }
  std::vector<Var> out;
  out.reserve(members_.size());
  for (auto& m : members_) out.push_back(m(tape, x, mode));
  return out;
}

Var disagreement(const std::vector<Var>& preds) {
  if (preds.size() < 2) throw std::invalid_argument("disagreement needs K >= 2 predictions");
  const double inv_k = 1.0 / static_cast<double>(preds.size());
  Var mu = preds[0];
  for (std::size_t k = 1; k < preds.size(); ++k) mu = mu + preds[k];
  mu = inv_k * mu;
  Var var = square(preds[0] - mu);
  for (std::size_t k = 1; k < preds.size(); ++k) var = var + square(preds[k] - mu);
  return row_mean(inv_k * var);
}

double disagreement(const Tensor& preds) {
  const std::size_t K = preds.rows(), D = preds.cols();
  if (K < 2) throw std::invalid_argument("disagreement needs K >= 2 predictions");
  double total = 0.0;
  for (std::size_t d = 0; d < D; ++d) {
    double mu = 0.0;
    for (std::size_t k = 0; k < K; ++k) mu += preds(k, d);
    mu /= static_cast<double>(K);
    double v = 0.0;
    for (std::size_t k = 0; k < K; ++k) v += (preds(k, d) - mu) * (preds(k, d) - mu);
    total += v / static_cast<double>(K);
  }
  return total / static_cast<double>(D);
}

Var Ensemble::intrinsic_reward(Tape& tape, Var feature, Var action, Mode mode) {
  return disagreement(predict_all(tape, feature, action, mode));
}

std::vector<double> Ensemble::intrinsic_reward(const Tensor& feature, const Tensor& action) {
  Tape tape;
  Var r = intrinsic_reward(tape, tape.constant(feature), tape.constant(action), Mode::Frozen);
  const auto v = r.value().values();
  return {v.begin(), v.end()};
}

Var Ensemble::loss(Tape& tape, Var feature, Var action, const Tensor& target) {
  Var y = tape.constant(target);
  std::vector<Var> preds = predict_all(tape, feature, action, Mode::Train);
  Var total = mean(square(preds[0] - y));
  for (std::size_t k = 1; k < preds.size(); ++k) total = total + mean(square(preds[k] - y));
  return total;
}

double Ensemble::train_step(const Tensor& feature, const Tensor& action, const Tensor& target) {
  Tape tape;
  for (auto& o : optimizers_) o.zero_grad();
  Var l = loss(tape, tape.constant(feature), tape.constant(action), target);
  tape.backward(l);
  // Each member's loss term touches only its own parameters, so one backward
  // pass gives every member exactly its own gradient.
  for (auto& o : optimizers_) o.step();
  return l.item();
}

ParamList Ensemble::parameters() {
  ParamList ps;
  for (auto& m : members_) append(ps, m.parameters());
  return ps;
}

}  // namespace drivelab::model
