#include "soma/env/gridworld.hpp"

#include <cmath>
#include <cstring>

namespace soma {

namespace {

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr std::array<std::pair<int, int>, 8> kMoore{
    {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}}};
constexpr std::array<std::pair<int, int>, 4> kCardinal{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};

}  // namespace

std::string_view action_name(Action a) {
  switch (a) {
    case Action::Up: return "UP";
    case Action::Down: return "DOWN";
    case Action::Left: return "LEFT";
    case Action::Right: return "RIGHT";
    case Action::Stay: return "STAY";
  }
  return "?";
}

std::string_view zone_name(Zone z) {
  static constexpr std::array<std::string_view, kNumZones> names{
      "top-left",    "top-middle",    "top-right",    "middle-left", "middle-middle",
      "middle-right", "bottom-left", "bottom-middle", "bottom-right"};
  if (z < 0 || z >= kNumZones) throw ContractError("zone index out of range");
  return names[static_cast<std::size_t>(z)];
}

std::uint64_t state_hash(const EnvState& s) {
  std::uint64_t h = fnv1a64("envstate");
  auto fold = [&](std::uint64_t v) { h = mix64(h ^ v); };
  fold(static_cast<std::uint64_t>(s.row));
  fold(static_cast<std::uint64_t>(s.col));
  std::uint64_t ub;
  std::memcpy(&ub, &s.u, sizeof ub);
  fold(ub);
  fold(static_cast<std::uint64_t>(s.t));
  fold(s.noise.key());
  fold(s.noise.counter());
  for (const auto& r : s.shocks) {
    std::uint64_t db;
    std::memcpy(&db, &r.delta, sizeof db);
    fold(static_cast<std::uint64_t>(r.t));
    fold(db);
  }
  return h;
}

GridWorld::GridWorld(GridConfig cfg) : cfg_(cfg) {
  if (cfg_.height < 3 || cfg_.width < 3) throw ParameterError("grid must be at least 3x3");
  if (cfg_.tendency_horizon < 1) throw ParameterError("tendency horizon must be >= 1");
  const double mid = 0.5 * (cfg_.height - 1);
  for (int r = 0; r < cfg_.height; ++r) {
    const double y = (mid - r) * (3.0 / mid);
    affordance_by_row_.push_back(logistic(cfg_.affordance_slope * y) - 0.5);
  }
}

double GridWorld::affordance(int row) const {
  if (row < 0 || row >= cfg_.height) throw ContractError("affordance: row " + std::to_string(row) + " outside grid");
  return affordance_by_row_[static_cast<std::size_t>(row)];
}

double GridWorld::noise_std(int col) const {
  return cfg_.sigma_left + (cfg_.sigma_right - cfg_.sigma_left) * col / (cfg_.width - 1);
}

double GridWorld::texture(int /*row*/, int col) const { return static_cast<double>(col) / (cfg_.width - 1); }

double GridWorld::step_body(double u, bool moved, int row, int /*col*/) const {
  return cfg_.rho_aff * u - cfg_.c_met - (moved ? cfg_.c_move : 0.0) + cfg_.lambda_aff * affordance(row);
}

EnvState GridWorld::initial_state(RngStream noise) const {
  EnvState s;
  s.row = cfg_.height / 2;
  s.col = cfg_.width / 2;
  s.u = cfg_.u_reset;
  s.t = 0;
  s.noise = noise;
  return s;
}

Observation GridWorld::observe(const EnvState& s) const {
  Observation o;
  const double sigma = noise_std(s.col);
  const std::uint64_t base = static_cast<std::uint64_t>(s.t) * 12;
  for (std::size_t i = 0; i < kMoore.size(); ++i) {
    const int r = s.row + kMoore[i].first, c = s.col + kMoore[i].second;
    const bool inside = r >= 0 && r < cfg_.height && c >= 0 && c < cfg_.width;
    const double base_value = inside ? texture(r, c) : 0.0;
    o.x[i] = base_value + (sigma > 0 ? sigma * s.noise.normal_at(base + i) : 0.0);
  }
  o.b_tilde = logistic(s.u);
  for (std::size_t d = 0; d < kCardinal.size(); ++d) {
    int r = s.row + kCardinal[d].first, c = s.col + kCardinal[d].second;
    if (r < 0 || r >= cfg_.height || c < 0 || c >= cfg_.width) {
      r = s.row;
      c = s.col;
    }
    o.silhouette[d] =
        affordance(r) + (cfg_.sigma_sil > 0 ? cfg_.sigma_sil * s.noise.normal_at(base + 8 + d) : 0.0);
  }
  return o;
}

std::pair<int, int> GridWorld::target_cell(int row, int col, Action a) const {
  int r = row, c = col;
  switch (a) {
    case Action::Up: --r; break;
    case Action::Down: ++r; break;
    case Action::Left: --c; break;
    case Action::Right: ++c; break;
    case Action::Stay: break;
  }
  if (r < 0 || r >= cfg_.height || c < 0 || c >= cfg_.width) return {row, col};
  return {r, c};
}

StepOutcome GridWorld::step(EnvState& s, Action a) const {
  const auto [r, c] = target_cell(s.row, s.col, a);
  const bool moved = r != s.row || c != s.col;
  s.row = r;
  s.col = c;
  s.u = step_body(s.u, moved, r, c);
  ++s.t;
  return StepOutcome{observe(s), moved};
}

double GridWorld::counterfactual_tendency(const EnvState& s, Action a, int k) const {
  if (k < 1) throw ContractError("counterfactual_tendency: horizon must be >= 1");
  int row = s.row, col = s.col;
  double u = s.u;
  for (int i = 0; i < k; ++i) {
    const auto [r, c] = target_cell(row, col, a);
    const bool moved = r != row || c != col;
    row = r;
    col = c;
    u = step_body(u, moved, row, col);
  }
  return u - s.u;
}

double GridWorld::counterfactual_readout(const EnvState& s, Action a) const {
  const auto [r, c] = target_cell(s.row, s.col, a);
  return logistic(step_body(s.u, r != s.row || c != s.col, r, c));
}

void GridWorld::inject_shock(EnvState& s, double delta) const {
  s.u += delta;
  s.shocks.push_back({s.t, delta});
}

Zone GridWorld::zone_of(int row, int col) const {
  if (row < 0 || row >= cfg_.height || col < 0 || col >= cfg_.width) throw ContractError("zone_of: cell outside grid");
  return (row * 3 / cfg_.height) * 3 + col * 3 / cfg_.width;
}

}  // namespace soma
