#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <vector>

#include "drivelab/diff/tensor.hpp"

namespace drivelab::diff {

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }

  const Tensor& value() const;
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const { return value().item(); }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Backward rule for one node: receives the node id and its upstream gradient,
/// and accumulates into its inputs via Tape::grad_accumulator.
using BackwardFn = std::function<void(Tape&, std::uint32_t self, const Tensor& grad)>;

/// Linear recording of a forward computation. Nodes are appended in execution
/// order, so reverse recording order is a valid reverse topological order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var constant(double value) { return constant(Tensor::scalar(value)); }
  /// Owned leaf whose gradient can be read back with grad().
  Var variable(Tensor value);
  /// Trainable parameter leaf: gradients accumulate into p.grad.
  Var param(Parameter& p);
  /// Parameter used as a constant: gradients flow through ops but never into p.
  Var frozen(const Parameter& p);

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  /// Reverse pass from a scalar loss. Intermediate gradients are recomputed on
  /// every call; leaf and parameter gradients accumulate until reset explicitly.
  void backward(Var loss);

  /// Gradient of an owned node (zeros if none reached it).
  Tensor grad(Var v) const;

  const Tensor& value(std::uint32_t id) const;
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of a node, allocated as zeros on first use.
  Tensor& grad_accumulator(std::uint32_t id);

  void reset();
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external_value = nullptr;
    Tensor grad;
    Tensor* external_grad = nullptr;
    bool requires_grad = false;
    bool is_leaf = false;
    BackwardFn backward;
  };

  Var push(Node node);

  std::deque<Node> nodes_;  // stable references across appends
};

}  // namespace drivelab::diff
