#include "soma/numcore/layers.hpp"

#include <cmath>

#include "soma/harness/rng.hpp"

namespace soma {

namespace {

Tensor uniform_init(Shape shape, std::size_t fan_in, RngStream& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.storage()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

Affine::Affine(const std::string& name, std::size_t in_dim, std::size_t out_dim, RngStream& rng)
    : weight(name + ".weight", uniform_init(Shape{out_dim, in_dim}, in_dim, rng)),
      bias(name + ".bias", uniform_init(Shape{out_dim}, in_dim, rng)) {}

Var Affine::operator()(Tape& tape, Var x) { return affine(tape.param(weight), x, tape.param(bias)); }

void Affine::zero_weights() {
  weight.value = Tensor(weight.value.shape(), 0.0);
  bias.value = Tensor(bias.value.shape(), 0.0);
}

GruCell::GruCell(const std::string& name, std::size_t in, std::size_t hid, RngStream& rng)
    : input_dim(in), hidden_dim(hid) {
  // Fan-in covers both the input and recurrent contribution to each gate.
  const std::size_t fan = in + hid;
  w_update = Parameter(name + ".w_update", uniform_init(Shape{hid, in}, fan, rng));
  u_update = Parameter(name + ".u_update", uniform_init(Shape{hid, hid}, fan, rng));
  b_update = Parameter(name + ".b_update", uniform_init(Shape{hid}, fan, rng));
  w_reset = Parameter(name + ".w_reset", uniform_init(Shape{hid, in}, fan, rng));
  u_reset = Parameter(name + ".u_reset", uniform_init(Shape{hid, hid}, fan, rng));
  b_reset = Parameter(name + ".b_reset", uniform_init(Shape{hid}, fan, rng));
  w_cand = Parameter(name + ".w_cand", uniform_init(Shape{hid, in}, fan, rng));
  u_cand = Parameter(name + ".u_cand", uniform_init(Shape{hid, hid}, fan, rng));
  b_cand = Parameter(name + ".b_cand", uniform_init(Shape{hid}, fan, rng));
}

std::vector<Parameter*> GruCell::parameters() {
  return {&w_update, &u_update, &b_update, &w_reset, &u_reset, &b_reset, &w_cand, &u_cand, &b_cand};
}

Var gru_step(Tape& tape, GruCell& cell, Var x, Var h) {
  if (x.size() != cell.input_dim || x.value().rank() != 1)
    throw DimensionError("gru_step: input has " + std::to_string(x.size()) + " entries, cell expects " +
                         std::to_string(cell.input_dim));
  if (h.size() != cell.hidden_dim || h.value().rank() != 1)
    throw DimensionError("gru_step: hidden has " + std::to_string(h.size()) + " entries, cell expects " +
                         std::to_string(cell.hidden_dim));
  auto p = [&](Parameter& q) { return tape.param(q); };
  Var u = logistic(add(affine(p(cell.w_update), x, p(cell.b_update)), matmul(p(cell.u_update), h)));
  Var r = logistic(add(affine(p(cell.w_reset), x, p(cell.b_reset)), matmul(p(cell.u_reset), h)));
  Var n = tanh(add(affine(p(cell.w_cand), x, p(cell.b_cand)), matmul(p(cell.u_cand), mul(r, h))));
  Var one_minus_u = sub(tape.constant(Tensor(u.shape(), 1.0)), u);
  return add(mul(one_minus_u, n), mul(u, h));
}

void AdamState::reset(const std::vector<Parameter*>& params) {
  step = 0;
  m.clear();
  v.clear();
  for (const Parameter* p : params) {
    m.emplace_back(p->value.shape(), 0.0);
    v.emplace_back(p->value.shape(), 0.0);
  }
}

void adam_step(const std::vector<Parameter*>& params, AdamState& state, double lr) {
  if (state.m.size() != params.size()) throw DimensionError("adam_step: optimizer state does not match parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (state.m[k].shape() != p.value.shape()) throw DimensionError("adam_step: moment shape mismatch for " + p.name);
    auto& w = p.value.storage();
    const auto& g = p.grad.storage();
    auto& m = state.m[k].storage();
    auto& v = state.v[k].storage();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace soma
