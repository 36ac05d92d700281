#include "soma/perspective/perspective.hpp"

#include <cmath>

namespace soma {

Perspective::Perspective(const PerspectiveConfig& cfg, std::size_t z_dim, RngStream& rng)
    : gru("perspective.gru", z_dim + 2, cfg.d_g, rng), alpha_net("perspective.alpha", 2, 1, rng), cfg_(cfg),
      z_dim_(z_dim) {
  alpha_net.bias.value[0] = cfg.alpha_bias_init;
  if (!std::isnan(cfg.alpha_weight_init))
    for (auto& w : alpha_net.weight.value.storage()) w = cfg.alpha_weight_init;
}

double Perspective::error_feature(double error, double gain) const {
  if (!(error >= 0.0)) throw ContractError("perspective error inputs must be non-negative");
  return std::log1p(gain * error);
}

Var Perspective::update_g(Tape& tape, Var g_prev, Var z, double obs_error, double body_error, RoutingSwitch routing) {
  if (g_prev.size() != cfg_.d_g) throw DimensionError("update_g: g has wrong length");
  if (z.size() != z_dim_) throw DimensionError("update_g: z has wrong length");
  const double e_obs = error_feature(obs_error, cfg_.obs_error_gain);
  const double e_body = routing.body_to_g ? error_feature(body_error, cfg_.body_error_gain) : 0.0;
  Var errors = tape.constant(Tensor::vector({e_obs, e_body}));
  Var candidate = gru_step(tape, gru, concat({z, errors}), g_prev);

  Var alpha;
  if (alpha_override) {
    alpha = tape.constant(Tensor::vector({*alpha_override}));
  } else {
    alpha = logistic(alpha_net(tape, errors));
  }
  last_alpha_ = alpha.value()[0];
  // Broadcast the scalar rate over the d_g lanes.
  std::vector<Var> lanes(cfg_.d_g, alpha);
  Var a = concat(std::span<const Var>(lanes));
  Var keep = sub(tape.constant(Tensor(Shape{cfg_.d_g}, 1.0)), a);
  return add(mul(keep, g_prev), mul(a, candidate));
}

std::vector<Parameter*> Perspective::parameters() {
  auto ps = gru.parameters();
  for (Parameter* p : alpha_net.parameters()) ps.push_back(p);
  return ps;
}

Tensor decay_across_episode(const Tensor& g, double factor) {
  Tensor out = g;
  for (auto& v : out.storage()) v *= factor;
  return out;
}

Tensor reset_for_rollout(std::size_t d_g) { return Tensor(Shape{d_g}, 0.0); }

void firewall_check(std::string_view loss_name, const std::vector<Parameter*>& protected_params) {
  for (const Parameter* p : protected_params) {
    if (!p->grad_is_zero())
      throw FirewallViolation(std::string(loss_name) + " loss leaked a gradient into " + p->name +
                              " (max |grad| = " + std::to_string(p->grad_abs_max()) + ")");
  }
}

}  // namespace soma
