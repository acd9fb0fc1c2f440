#include "drivelab/diff/tape.hpp"

#include <limits>

namespace drivelab::diff {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::push(Node node) {
  if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max()) {
    throw std::length_error("tape node limit exceeded");
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.is_leaf = true;
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.is_leaf = true;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  if (!p.grad.same_shape(p.value)) p.grad = Tensor(p.value.rows(), p.value.cols());
  Node n;
  n.external_value = &p.value;
  n.external_grad = &p.grad;
  n.requires_grad = true;
  n.is_leaf = true;
  return push(std::move(n));
}

Var Tape::frozen(const Parameter& p) {
  Node n;
  n.external_value = &p.value;
  n.is_leaf = true;
  return push(std::move(n));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.valid() && &v.tape() != this) throw std::invalid_argument("operands recorded on different tapes");
    needs = needs || v.requires_grad();
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(backward);
  return push(std::move(n));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.valid() && &v.tape() != this) throw std::invalid_argument("operands recorded on different tapes");
    needs = needs || v.requires_grad();
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(backward);
  return push(std::move(n));
}

const Tensor& Tape::value(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.external_value ? *n.external_value : n.value;
}

Tensor& Tape::grad_accumulator(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.external_grad) return *n.external_grad;
  if (n.grad.empty()) {
    const Tensor& v = value(id);
    n.grad = Tensor(v.rows(), v.cols());
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
  const Tensor& lv = value(loss.id());
  if (!lv.is_scalar()) throw ShapeError("backward: loss must be scalar, got " + shape_string(lv));
  for (Node& n : nodes_) {
    if (!n.external_grad && !n.is_leaf) n.grad = Tensor();
  }
  if (!nodes_[loss.id()].requires_grad) return;
  Tensor& seed = grad_accumulator(loss.id());
  seed[0] += 1.0;
  for (std::int64_t i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || !n.backward) continue;
    if (n.grad.empty()) continue;
    n.backward(*this, static_cast<std::uint32_t>(i), n.grad);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.external_grad) return *n.external_grad;
  if (n.grad.empty()) {
    const Tensor& val = value(v.id());
    return Tensor(val.rows(), val.cols());
  }
  return n.grad;
}

void Tape::reset() { nodes_.clear(); }

}  // namespace drivelab::diff
