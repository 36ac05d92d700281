#pragma once

#include <array>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "soma/agent/agent.hpp"
#include "soma/env/gridworld.hpp"

namespace soma {

/// Which mechanisms a training condition keeps.
struct CohortConfig {
  std::string name;
  bool body_to_g = true;
  bool conative_on = true;
};

inline constexpr std::array<std::string_view, 3> kCohortNames{"full", "no_conation", "no_body_to_g"};
/// Throws ParameterError listing the valid names.
CohortConfig make_cohort(std::string_view name);

struct TrainerConfig {
  double lr = 1e-3;
  double gamma = 0.95;
  double entropy_coef = 0.01;
  double lambda_body = 1.0;
  double lambda_con = 0.5;
  int episodes = 180;
  int warmup_episodes = 30;
  int steps_per_episode = 200;
  /// Steps between optimizer updates; 0 means one update per episode. A shorter interval
  /// truncates the actor's returns and baseline at the update boundary.
  int update_interval = 20;
};

struct LossBreakdown {
  double obs_pred = 0.0;
  double actor = 0.0;
  double body = 0.0;
  double conative = 0.0;
  double total = 0.0;
};

struct TrajectoryRow {
  int t = 0;
  int row = 0;
  int col = 0;
  int action = 0;
  double u = 0.0;
  double b_tilde = 0.0;
  bool moved = false;
  Zone zone = 0;
};

struct EpisodeLog {
  int episode = 0;
  bool warmup = false;
  LossBreakdown losses;
  std::array<double, kNumZones> occupancy{};
  std::array<double, kNumActions> mean_q{};
  std::array<double, kNumActions> mean_pi{};
  double mean_abs_dg = 0.0;
  double mean_abs_dz = 0.0;
  double final_u = 0.0;
  std::vector<TrajectoryRow> trajectory;
};

/// Raised when a loss or gradient turns non-finite; carries the episode index.
struct TrainingAborted : std::runtime_error {
  TrainingAborted(int episode_, const std::string& what) : std::runtime_error(what), episode(episode_) {}
  int episode;
};

/// Actor objective over one episode. The intrinsic return at t is minus the discounted sum of the
/// one-step observation prediction errors from t onward; the advantage subtracts its episode mean.
///   loss = mean_t [ -log pi(a_t) * A_t - entropy_coef * H(pi_t) ]
Var actor_loss(Tape& tape, const std::vector<Var>& log_pi_taken, const std::vector<Var>& entropies,
               const std::vector<double>& prediction_errors, double gamma, double entropy_coef);

/// Advantages used by actor_loss, exposed for inspection.
std::vector<double> intrinsic_advantages(const std::vector<double>& prediction_errors, double gamma);

/// mean_a (eta_hat(a) - eta*(a))^2 + mean_a (b_hat(a) - b*(a))^2.
Var body_loss(Tape& tape, Var eta_hat, Var b_hat, const Tensor& eta_target, const Tensor& b_target);

/// Counterfactual targets for every action at the given state.
struct BodyTargets {
  Tensor eta;
  Tensor b_next;
};
BodyTargets body_targets(const GridWorld& env, const EnvState& s);

/// Per-loss handles of one recorded episode.
struct EpisodeGraph {
  Var obs_pred, actor, body, conative;
  EpisodeLog log;
  Tensor final_g;
};

struct EpisodeCursor;

/// A single (cohort, seed) training run: parameters, optimizer state, and the carried g.
class TrainingRun {
 public:
  TrainingRun(const GridConfig& env_cfg, const AgentConfig& agent_cfg, const TrainerConfig& trainer_cfg,
              CohortConfig cohort, int seed, std::uint64_t master_seed);

  /// Records one full episode on the tape without touching parameters.
  EpisodeGraph record_episode(Tape& tape, bool keep_trajectory = false);
  /// Records, backpropagates the active loss terms and applies one Adam step.
  EpisodeLog train_episode(bool keep_trajectory = false);

  /// Combines loss values according to warmup and cohort switches.
  LossBreakdown combine(double obs_pred, double actor, double body, double conative, bool warmup) const;

  int next_episode() const { return episode_; }
  bool in_warmup() const { return episode_ < trainer_cfg_.warmup_episodes; }
  bool done() const { return episode_ >= trainer_cfg_.episodes; }

  Agent& agent() { return agent_; }
  const GridWorld& env() const { return env_; }
  const CohortConfig& cohort() const { return cohort_; }
  const TrainerConfig& trainer_config() const { return trainer_cfg_; }
  int seed() const { return seed_; }
  std::uint64_t master_seed() const { return master_seed_; }
  const Tensor& g() const { return g_; }
  AdamState& adam() { return adam_; }

  /// Restores mutable run state (used by checkpoint loading).
  void restore(int next_episode, Tensor g, AdamState adam);

  RngStream env_noise_stream(int episode) const;
  RngStream policy_stream(int episode) const;

 private:
  EpisodeCursor begin_episode() const;
  EpisodeGraph record_steps(Tape& tape, EpisodeCursor& cur, int n, bool keep_trajectory);
  EpisodeLog finish_episode(EpisodeCursor& cur) const;

  GridWorld env_;
  TrainerConfig trainer_cfg_;
  CohortConfig cohort_;
  int seed_;
  std::uint64_t master_seed_;
  RngStream run_root_;
  Agent agent_;
  AdamState adam_;
  Tensor g_;
  int episode_ = 0;
};

/// Per-loss presence of gradient in each parameter group on one live episode batch.
using FirewallMatrix = std::map<std::string, std::map<std::string, bool>>;
FirewallMatrix gradient_presence(TrainingRun& run);
/// Reachability implied by the network wiring.
FirewallMatrix expected_wiring();

}  // namespace soma
