#include "soma/agent/agent.hpp"

#include <cmath>

namespace soma {

Tensor one_hot(int index, std::size_t n) {
  Tensor t(Shape{n}, 0.0);
  if (index >= 0) {
    if (static_cast<std::size_t>(index) >= n) throw DimensionError("one_hot index out of range");
    t[static_cast<std::size_t>(index)] = 1.0;
  }
  return t;
}

Agent::Agent(const AgentConfig& cfg, RngStream init) : cfg_(cfg) {
  const std::size_t dz = cfg.z_dim(), dg = cfg.d_g();
  encoder_obs = Affine("encoder_obs", kObsDim, cfg.obs_hidden, init);
  encoder_body = Affine("encoder_body", kBodyInputDim, cfg.body_hidden, init);
  metric_net = Affine("metric_net", dg, dz * (dz + 1) / 2, init);
  state_head = Affine("state_head", dz + dz * dz + kNumActions + dg, cfg.state_dim, init);
  policy_head = Affine("policy_head", cfg.state_dim + 1, kNumActions, init);
  obs_decoder = Affine("obs_decoder", dz + kNumActions + dg, kObsDim, init);
  body_decoder = Affine("body_decoder", dz + dg + 1, 2 * kNumActions, init);
  perspective = Perspective(cfg.perspective, dz, init);
}

Var Agent::encode(Tape& tape, Var x, Var body_input) {
  if (x.size() != kObsDim || body_input.size() != kBodyInputDim)
    throw DimensionError("encode: expects 8 exteroceptive and 5 interoceptive inputs");
  Var z_obs = tanh(encoder_obs(tape, x));
  Var z_body = tanh(encoder_body(tape, body_input));
  return concat({z_obs, z_body});
}

Var Agent::encode(Tape& tape, const Observation& obs) {
  Var x = tape.constant(Tensor::vector(std::span<const double>(obs.x)));
  Var b = tape.constant(Tensor::vector({obs.b_tilde, obs.silhouette[0], obs.silhouette[1], obs.silhouette[2],
                                        obs.silhouette[3]}));
  return encode(tape, x, b);
}

std::pair<Var, Var> Agent::metric(Tape& tape, Var g) {
  const std::size_t dz = cfg_.z_dim();
  Var l = lower_triangular(metric_net(tape, g), dz);
  Var m = add_diagonal(matmul(l, transpose(l)), cfg_.metric_epsilon);
  return {l, m};
}

MetricGeometry Agent::metric_from_g(const Tensor& g) {
  Tape tape;
  tape.set_grad_enabled(false);
  auto [l, m] = metric(tape, tape.constant(g));
  return MetricGeometry{l.value(), m.value(), cfg_.metric_epsilon};
}

Var quadratic_features(Var z, Var m) {
  if (m.value().rank() != 2 || m.value().rows() != z.size() || m.value().cols() != z.size())
    throw DimensionError("quadratic_features: metric does not match z");
  return flatten(outer(z, matmul(m, z)));
}

Var Agent::policy_state(Tape& tape, Var z, Var phi, Var p, Var g) {
  return tanh(state_head(tape, concat({z, phi, p, g})));
}

Var Agent::policy(Tape& tape, Var s, Var b_tilde) { return policy_head(tape, concat({s, b_tilde})); }

Var Agent::predict_observation(Tape& tape, Var z, Var action_one_hot, Var g) {
  if (action_one_hot.size() != kNumActions) throw DimensionError("predict_observation: action must be one-hot of 5");
  return obs_decoder(tape, concat({z, action_one_hot, g}));
}

std::pair<Var, Var> Agent::body_decode(Tape& tape, Var z, Var g, Var b_tilde) {
  Var h = body_decoder(tape, concat({z, g, b_tilde}));
  return {slice(h, 0, kNumActions), logistic(slice(h, kNumActions, kNumActions))};
}

ForwardVars Agent::forward(Tape& tape, const Observation& obs, int prev_action, const Tensor& g_prev, double obs_error,
                           double body_error, RoutingSwitch routing) {
  ForwardVars f;
  Var b_tilde = tape.constant(obs.b_tilde);
  Var p = tape.constant(one_hot(prev_action, kNumActions));
  f.z = encode(tape, obs);
  f.g = perspective.update_g(tape, tape.constant(g_prev), f.z, obs_error, body_error, routing);

  // Policy side: perspective and metric enter as constants.
  f.g_policy = detach(f.g);
  f.metric = detach(metric(tape, f.g_policy).second);
  f.phi = quadratic_features(f.z, f.metric);
  f.s = policy_state(tape, f.z, f.phi, p, f.g_policy);
  f.logits = policy(tape, f.s, b_tilde);
  f.log_pi = log_softmax(f.logits);
  f.pi = softmax(f.logits);
  f.pi_conative = softmax(policy(tape, detach(f.s), b_tilde));

  std::tie(f.eta_hat, f.b_hat) = body_decode(tape, f.z, f.g, b_tilde);
  f.q = conative_distribution(f.eta_hat.value(), f.b_hat.value(), cfg_.conative);
  return f;
}

std::vector<Parameter*> Agent::parameters() {
  std::vector<Parameter*> ps;
  for (auto& [name, group] : parameter_groups()) ps.insert(ps.end(), group.begin(), group.end());
  return ps;
}

std::map<std::string, std::vector<Parameter*>> Agent::parameter_groups() {
  auto encoders = encoder_obs.parameters();
  for (Parameter* p : encoder_body.parameters()) encoders.push_back(p);
  return {
      {"encoders", encoders},
      {"metric_net", metric_net.parameters()},
      {"state_head", state_head.parameters()},
      {"policy_head", policy_head.parameters()},
      {"obs_decoder", obs_decoder.parameters()},
      {"body_decoder", body_decoder.parameters()},
      {"perspective", perspective.parameters()},
  };
}

std::size_t Agent::parameter_count() {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

void Agent::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

Tensor conative_distribution(const Tensor& eta_hat, const Tensor& b_hat_next, const ConativeConfig& cfg) {
  if (!(cfg.temperature > 0.0)) throw ParameterError("conative temperature must be positive");
  if (eta_hat.size() != b_hat_next.size()) throw DimensionError("conative_distribution: head sizes differ");
  const std::size_t n = eta_hat.size();
  std::vector<double> v(n);
  double mx = -INFINITY;
  for (std::size_t a = 0; a < n; ++a) {
    v[a] = (cfg.w_eta * eta_hat[a] + cfg.w_b * b_hat_next[a]) / cfg.temperature;
    mx = std::max(mx, v[a]);
  }
  double z = 0.0;
  for (auto& e : v) {
    e = std::exp(e - mx);
    z += e;
  }
  for (auto& e : v) e /= z;
  return Tensor::vector(std::move(v));
}

Var conative_loss(Tape& tape, const Tensor& q, Var pi) { return kl_divergence(tape.constant(q), pi); }

int sample_action(const Tensor& pi, double u) {
  double c = 0.0;
  for (std::size_t a = 0; a < pi.size(); ++a) {
    c += pi[a];
    if (u < c) return static_cast<int>(a);
  }
  return static_cast<int>(pi.size()) - 1;
}

}  // namespace soma
