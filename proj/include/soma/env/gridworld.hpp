#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "soma/harness/rng.hpp"
#include "soma/numcore/tensor.hpp"

namespace soma {

enum class Action : int { Up = 0, Down = 1, Left = 2, Right = 3, Stay = 4 };
inline constexpr int kNumActions = 5;
inline constexpr std::array<Action, kNumActions> kAllActions{Action::Up, Action::Down, Action::Left, Action::Right,
                                                              Action::Stay};
std::string_view action_name(Action a);

inline constexpr int kNumZones = 9;
/// Zone index = (row / 5) * 3 + col / 5, i.e. top-left .. bottom-right in reading order.
using Zone = int;
inline constexpr Zone kTopRight = 2;
inline constexpr Zone kMiddleMiddle = 4;
inline constexpr Zone kBottomLeft = 6;
std::string_view zone_name(Zone z);
/// True for the three zones of the bottom band (rows 10-14).
inline bool is_bottom_zone(Zone z) { return z >= 6; }

struct GridConfig {
  int height = 15;
  int width = 15;
  double sigma_left = 0.40;
  double sigma_right = 0.05;
  double affordance_slope = 1.6;
  double rho_aff = 0.995;
  double c_met = 0.002;
  double c_move = 0.001;
  double lambda_aff = 0.05;
  double sigma_sil = 0.1;
  int tendency_horizon = 4;
  double u_reset = 0.0;
};

struct ShockRecord {
  int t = 0;
  double delta = 0.0;
};

/// Ground truth of the world. A plain value: copies evolve independently.
struct EnvState {
  int row = 7;
  int col = 7;
  double u = 0.0;
  int t = 0;
  RngStream noise;
  std::vector<ShockRecord> shocks;
};

std::uint64_t state_hash(const EnvState& s);

struct Observation {
  std::array<double, 8> x{};  ///< Moore neighbours, reading order, centre skipped
  double b_tilde = 0.5;
  std::array<double, 4> silhouette{};  ///< up, down, left, right
};

struct StepOutcome {
  Observation observation;
  bool moved = false;
};

class GridWorld {
 public:
  explicit GridWorld(GridConfig cfg = {});

  const GridConfig& config() const { return cfg_; }
  int height() const { return cfg_.height; }
  int width() const { return cfg_.width; }

  /// logistic(slope * (c - row) * 3/c) - 0.5 with c the middle row.
  double affordance(int row) const;
  double noise_std(int col) const;
  double texture(int row, int col) const;

  /// Allostatic update of the latent viability at the (post-move) cell.
  double step_body(double u, bool moved, int row, int col) const;

  EnvState initial_state(RngStream noise) const;
  Observation observe(const EnvState& s) const;
  /// Moves with wall clamping, updates u, advances t, observes the new state.
  StepOutcome step(EnvState& s, Action a) const;

  /// u_{t+k} - u_t when action a is repeated k times from a copy of s (no noise involved).
  double counterfactual_tendency(const EnvState& s, Action a, int k) const;
  /// Readout logistic(u_{t+1}) after a single step of action a from a copy of s.
  double counterfactual_readout(const EnvState& s, Action a) const;

  void inject_shock(EnvState& s, double delta) const;
  Zone zone_of(int row, int col) const;

 private:
  std::pair<int, int> target_cell(int row, int col, Action a) const;

  GridConfig cfg_;
  std::vector<double> affordance_by_row_;
};

}  // namespace soma
