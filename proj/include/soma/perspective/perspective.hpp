#pragma once

#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "soma/numcore/layers.hpp"

namespace soma {

struct PerspectiveConfig {
  std::size_t d_g = 8;
  /// Initial bias of the update-rate network: logistic(-6) ~ 0.0025.
  double alpha_bias_init = -6.0;
  /// Initial weight on each error feature in the update-rate network; NaN keeps the random init.
  double alpha_weight_init = 2.0;
  double episode_decay = 0.99;
  /// Error scalars enter the recurrent update as log(1 + gain * error).
  double obs_error_gain = 10.0;
  double body_error_gain = 1e5;
};

/// Whether body-prediction error reaches the recurrent update of g.
struct RoutingSwitch {
  bool body_to_g = true;
};

/// Raised when a loss that must not touch the perspective pathway left a gradient there.
struct FirewallViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// The slow latent g: an error-gated recurrent state that persists across episodes.
class Perspective {
 public:
  Perspective() = default;
  Perspective(const PerspectiveConfig& cfg, std::size_t z_dim, RngStream& rng);

  const PerspectiveConfig& config() const { return cfg_; }
  std::size_t z_dim() const { return z_dim_; }

  /// candidate = GRU([z; e_obs; route * e_body], g_prev)
  /// alpha     = logistic(A [e_obs; route * e_body] + a)
  /// g'        = (1 - alpha) g_prev + alpha candidate
  /// where e_* = log(1 + gain * error). Errors are detached squared-error scalars.
  Var update_g(Tape& tape, Var g_prev, Var z, double obs_error, double body_error, RoutingSwitch routing);

  double error_feature(double error, double gain) const;

  /// Test hook: pins alpha instead of evaluating the rate network.
  std::optional<double> alpha_override;
  /// Rate used by the most recent update_g call.
  double last_alpha() const { return last_alpha_; }

  std::vector<Parameter*> parameters();

  GruCell gru;
  Affine alpha_net;

 private:
  PerspectiveConfig cfg_;
  std::size_t z_dim_ = 0;
  double last_alpha_ = 0.0;
};

/// g' = factor * g, applied at every episode boundary.
Tensor decay_across_episode(const Tensor& g, double factor = 0.99);

/// The perspective state at rollout onset: the zero vector.
Tensor reset_for_rollout(std::size_t d_g);

/// Throws FirewallViolation naming the first protected parameter holding a nonzero gradient.
void firewall_check(std::string_view loss_name, const std::vector<Parameter*>& protected_params);

}  // namespace soma
