#pragma once

#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "soma/numcore/tensor.hpp"

namespace soma {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid until the tape is cleared.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }
  bool requires_grad() const;
  /// Gradient accumulated by the last backward pass (zeros when none reached this node).
  Tensor grad() const;

  Tape& tape() const;
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so every node's parents
/// precede it and a single reverse sweep visits each node once.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var constant(double v) { return constant(Tensor::scalar(v)); }
  /// Leaf bound to a parameter; backward() accumulates into parameter.grad.
  /// Repeated calls with the same parameter return the same node.
  Var param(Parameter& p);

  /// Appends an op result. The backward closure is kept only when some parent needs a gradient.
  Var record(Tensor value, std::vector<int> parents, Backward backward);

  /// Accumulates d(loss)/d(leaf) into every reachable parameter. Loss must be a scalar.
  void backward(Var loss);

  /// Drops all nodes. Outstanding Var handles become invalid.
  void clear();

  /// Disables gradient tracking for parameters bound after the call (frozen evaluation).
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(int id) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  /// Mutable gradient buffer for node id (allocated on first touch).
  std::vector<double>& grad(int id);
  bool has_grad(int id) const { return !nodes_[id].grad.empty(); }
  Var var(int id) { return Var(this, id); }

 private:
  struct Node {
    Tensor owned;
    Parameter* param = nullptr;
    std::vector<int> parents;
    Backward backward;
    std::vector<double> grad;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, int> param_nodes_;
  bool grad_enabled_ = true;
};

}  // namespace soma
