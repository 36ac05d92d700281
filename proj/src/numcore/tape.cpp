#include "soma/numcore/tape.hpp"

#include <algorithm>
#include <cmath>

namespace soma {

const Tensor& Var::value() const { return tape_->value(id_); }

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Tensor Var::grad() const {
  const Tensor& v = value();
  if (!tape_->has_grad(id_)) return Tensor(v.shape(), 0.0);
  return Tensor(v.shape(), tape_->grad(id_));
}

Tape& Var::tape() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return *tape_;
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NonFiniteError("non-finite constant recorded on tape");
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.param = &p;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size() - 1);
  param_nodes_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::record(Tensor value, std::vector<int> parents, Backward backward) {
  if (!value.all_finite()) throw NonFiniteError("forward pass produced a non-finite value");
  Node n;
  n.owned = std::move(value);
  n.requires_grad = std::any_of(parents.begin(), parents.end(), [&](int p) { return nodes_[p].requires_grad; });
  if (n.requires_grad) {
    n.parents = std::move(parents);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Tensor& Tape::value(int id) const {
  const Node& n = nodes_[id];
  return n.param ? n.param->value : n.owned;
}

std::vector<double>& Tape::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(value(id).size(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw ContractError("backward() on a Var from another tape");
  if (value(loss.id_).size() != 1) throw ContractError("backward() requires a scalar loss");
  for (auto& n : nodes_) n.grad.clear();
  if (!nodes_[loss.id_].requires_grad) return;
  grad(loss.id_)[0] = 1.0;
  for (int id = loss.id_; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param) {
      auto& g = n.param->grad.storage();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += n.grad[i];
        if (!std::isfinite(g[i])) throw NonFiniteError("non-finite gradient for parameter " + n.param->name);
      }
      continue;
    }
    n.backward(*this, id);
  }
}

void Tape::clear() {
  nodes_.clear();
  param_nodes_.clear();
}

}  // namespace soma
