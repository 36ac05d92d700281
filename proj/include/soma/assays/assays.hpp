#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "soma/agent/agent.hpp"
#include "soma/trainer/trainer.hpp"

namespace soma {

struct AssayConfig {
  int occupancy_window = 50;
  int calibration_states = 600;
  int rollout_steps = 160;
  int shock_start = 60;
  int shock_end = 79;  ///< inclusive
  double shock_delta = -0.08;
  int recovery_start = 80;
  int recovery_end = 159;  ///< inclusive
  int probe_count = 64;
  int pca_components = 2;
};

// ---- behaviour ------------------------------------------------------------

struct OccupancyResult {
  std::array<double, kNumZones> zones{};
  double top_right = 0.0;
  double bottom = 0.0;
  int episodes_used = 0;
  bool short_run = false;  ///< fewer episodes than the window were available
};

/// Mean zone fractions over the last `window` episodes.
OccupancyResult occupancy_assay(const std::vector<EpisodeLog>& logs, int window = 50);

struct ReadinessResult {
  std::array<double, kNumActions> q{};
  int episodes_used = 0;
  bool short_run = false;
};

/// Mean conative target per action over the last `window` episodes.
ReadinessResult readiness_assay(const std::vector<EpisodeLog>& logs, int window = 50);

// ---- calibration ----------------------------------------------------------

struct CalibrationResult {
  std::vector<double> predicted;  ///< eta_hat(UP) - eta_hat(DOWN)
  std::vector<double> oracle;     ///< counterfactual UP - DOWN
  double r = 0.0;
  bool degenerate = false;  ///< zero variance on either side; r reported as 0
};

/// Replaces the decoder's eta_hat (test hook).
using EtaOverride = std::function<Tensor(const GridWorld&, const EnvState&, const Tensor& eta_hat)>;

/// Frozen on-trajectory sampling: the agent acts with its stochastic policy from the centre,
/// restarting every steps_per_episode steps, until `states` states are collected.
CalibrationResult calibration_assay(Agent& agent, const GridWorld& env, RoutingSwitch routing, const Tensor& g0,
                                    int states, int steps_per_episode, const RngStream& rng,
                                    const EtaOverride& eta_override = {});

// ---- shock rollouts -------------------------------------------------------

enum class Condition { Control, Shock };
const char* condition_name(Condition c);

struct RolloutStep {
  int t = 0;
  Tensor g;
  double u = 0.0;
  double b_tilde = 0.0;
  int row = 0;
  int col = 0;
  int action = 0;
  double obs_error = 0.0;
  double body_error = 0.0;
};

struct ShockRollout {
  Condition condition = Condition::Control;
  std::vector<RolloutStep> steps;
  std::vector<ShockRecord> shocks;
  double injected_total() const;
};

/// Frozen rollout from the centre with g reset to zero. The environment noise and the action
/// draws come from `pair_rng` only, so both conditions see identical randomness. In the shock
/// condition u receives `shock_delta` at the start of every step in the shock window, before
/// the step's observation is drawn.
ShockRollout shock_rollout(Agent& agent, const GridWorld& env, RoutingSwitch routing, const RngStream& pair_rng,
                           Condition condition, const AssayConfig& cfg = {});

/// Mean over the recovery window of u_shock - u_control.
double shock_magnitude(const ShockRollout& control, const ShockRollout& shock, const AssayConfig& cfg = {});

struct DisplacementResult {
  double displacement = 0.0;
  std::vector<double> curve;  ///< per recovery timestep, distance in PC space
  std::vector<std::array<double, 2>> control_pc, shock_pc;
  bool zero_variance = false;
};

/// PCA fitted on the union of both conditions' recovery-window g; displacement is the distance
/// between the two condition means in the leading-component coordinates.
DisplacementResult pca_displacement(const std::vector<Tensor>& control_g, const std::vector<Tensor>& shock_g,
                                    std::size_t components = 2);
DisplacementResult pca_displacement(const ShockRollout& control, const ShockRollout& shock,
                                    const AssayConfig& cfg = {});

/// Mean g over the recovery window.
Tensor recovery_mean_g(const ShockRollout& r, const AssayConfig& cfg = {});

// ---- same-state probe -----------------------------------------------------

struct Probe {
  Observation obs;
  int prev_action = -1;
};

struct ProbeSet {
  std::vector<Probe> probes;
  std::uint64_t hash() const;
};

/// Inputs visited by a random-walk rollout of the environment, every other step from t = 1.
ProbeSet make_probe_set(const GridWorld& env, const RngStream& rng, int count = 64);

struct ProbeResult {
  double state_distance = 0.0;
  double spectrum_distance = 0.0;
};

ProbeResult same_state_probe(Agent& agent, const Tensor& g_control, const Tensor& g_shock, const ProbeSet& probes);

// ---- per-run battery ------------------------------------------------------

struct AssayRow {
  std::string cohort;
  int seed = 0;
  double top_right_occupancy = 0.0;
  double bottom_occupancy = 0.0;
  std::array<double, kNumActions> q_by_action{};
  double eta_calibration_r = 0.0;
  bool calibration_degenerate = false;
  double pca_displacement = 0.0;
  bool pca_zero_variance = false;
  double state_distance = 0.0;
  double spectrum_distance = 0.0;
  double shock_magnitude = 0.0;
  double shock_injected = 0.0;
  bool pre_shock_identical = false;
  bool short_run = false;
  std::array<double, kNumZones> occupancy{};
};

struct RunAssays {
  AssayRow row;
  ShockRollout control, shock;
  CalibrationResult calibration;
  DisplacementResult displacement;
};

/// All assays for one trained run. `assay_rng` is keyed by seed only so that cohorts sharing a
/// seed also share their rollout randomness.
RunAssays assay_run(TrainingRun& run, const std::vector<EpisodeLog>& logs, const ProbeSet& probes,
                    const RngStream& assay_rng, const AssayConfig& cfg = {});

bool pre_shock_identical(const ShockRollout& control, const ShockRollout& shock, int shock_start);

}  // namespace soma
