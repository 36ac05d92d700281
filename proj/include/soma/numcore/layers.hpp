#pragma once

#include <functional>
#include <string>
#include <vector>

#include "soma/numcore/ops.hpp"

namespace soma {

class RngStream;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialised weight matrix plus bias.
struct Affine {
  Parameter weight;
  Parameter bias;

  Affine() = default;
  Affine(const std::string& name, std::size_t in_dim, std::size_t out_dim, RngStream& rng);

  std::size_t in_dim() const { return weight.value.cols(); }
  std::size_t out_dim() const { return weight.value.rows(); }
  Var operator()(Tape& tape, Var x);
  std::vector<Parameter*> parameters() { return {&weight, &bias}; }
  void zero_weights();
};

/// Gated recurrent unit:
///   u  = logistic(Wu x + Uu h + bu)        update gate
///   r  = logistic(Wr x + Ur h + br)        reset gate
///   n  = tanh(Wn x + Un (r * h) + bn)      candidate
///   h' = (1 - u) * n + u * h
struct GruCell {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Parameter w_update, u_update, b_update;
  Parameter w_reset, u_reset, b_reset;
  Parameter w_cand, u_cand, b_cand;

  GruCell() = default;
  GruCell(const std::string& name, std::size_t input_dim, std::size_t hidden_dim, RngStream& rng);

  std::vector<Parameter*> parameters();
};

Var gru_step(Tape& tape, GruCell& cell, Var x, Var h);

/// Adam moments for a fixed parameter list.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  void reset(const std::vector<Parameter*>& params);
};

/// One Adam update using each parameter's accumulated grad. Does not zero grads.
void adam_step(const std::vector<Parameter*>& params, AdamState& state, double lr);

}  // namespace soma
