#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "soma/env/gridworld.hpp"
#include "soma/numcore/layers.hpp"
#include "soma/perspective/perspective.hpp"

namespace soma {

struct ConativeConfig {
  double w_eta = 1.0;
  double w_b = 0.5;
  double temperature = 0.1;
};

struct AgentConfig {
  std::size_t obs_hidden = 16;
  std::size_t body_hidden = 8;
  std::size_t state_dim = 32;
  double metric_epsilon = 1e-3;
  ConativeConfig conative;
  PerspectiveConfig perspective;

  std::size_t z_dim() const { return obs_hidden + body_hidden; }
  std::size_t d_g() const { return perspective.d_g; }
};

inline constexpr std::size_t kObsDim = 8;
inline constexpr std::size_t kBodyInputDim = 5;
/// Upper bound on trainable scalars for the default sizes.
inline constexpr std::size_t kParameterBudget = 25000;

/// M = L L^T + eps I for the lower-triangular L produced from g.
struct MetricGeometry {
  Tensor L;
  Tensor M;
  double epsilon = 0.0;
};

/// Values of one timestep, kept for logging and assays.
struct AgentStep {
  Observation obs;
  Tensor p;
  Tensor z;
  Tensor g;
  Tensor phi_g;
  Tensor s;
  Tensor policy_logits;
  Tensor pi;
  Tensor q;
  Tensor eta_hat;
  Tensor b_hat_next;
  Tensor predicted_x_next;
  int action = -1;
  double alpha = 0.0;
};

/// Tape handles of one forward pass.
struct ForwardVars {
  Var z, g, g_policy, metric, phi, s, logits, log_pi, pi, pi_conative, eta_hat, b_hat;
  Tensor q;
};

Tensor one_hot(int index, std::size_t n);

class Agent {
 public:
  Agent(const AgentConfig& cfg, RngStream init);

  const AgentConfig& config() const { return cfg_; }

  Var encode(Tape& tape, Var x, Var body_input);
  Var encode(Tape& tape, const Observation& obs);
  /// Returns {L, M}.
  std::pair<Var, Var> metric(Tape& tape, Var g);
  MetricGeometry metric_from_g(const Tensor& g);
  Var policy_state(Tape& tape, Var z, Var phi, Var p, Var g);
  /// Logits over the five actions from [s; b_tilde].
  Var policy(Tape& tape, Var s, Var b_tilde);
  Var predict_observation(Tape& tape, Var z, Var action_one_hot, Var g);
  /// Returns {eta_hat[5], b_hat_next[5]}; b_hat passes through the logistic.
  std::pair<Var, Var> body_decode(Tape& tape, Var z, Var g, Var b_tilde);

  /// One perception/decision pass up to the policy and body heads. g_prev enters as a constant.
  /// The policy branch sees detached copies of g and M; the conative branch sees a detached s.
  ForwardVars forward(Tape& tape, const Observation& obs, int prev_action, const Tensor& g_prev, double obs_error,
                      double body_error, RoutingSwitch routing);

  std::vector<Parameter*> parameters();
  /// Named parameter groups used by the gradient firewall.
  std::map<std::string, std::vector<Parameter*>> parameter_groups();
  std::size_t parameter_count();
  void zero_grad();

  Affine encoder_obs;
  Affine encoder_body;
  Affine metric_net;
  Affine state_head;
  Affine policy_head;
  Affine obs_decoder;
  Affine body_decoder;
  Perspective perspective;

 private:
  AgentConfig cfg_;
};

/// phi = vec[z (M z)^T], row-major: phi[i * n + j] = z_i (M z)_j.
Var quadratic_features(Var z, Var m);

/// q = softmax((w_eta * eta + w_b * b_hat) / T) on detached values.
Tensor conative_distribution(const Tensor& eta_hat, const Tensor& b_hat_next, const ConativeConfig& cfg);

/// KL(q || pi) with q entering as a constant.
Var conative_loss(Tape& tape, const Tensor& q, Var pi);

/// Inverse-CDF draw: the first action whose cumulative probability exceeds u.
int sample_action(const Tensor& pi, double u);

}  // namespace soma
