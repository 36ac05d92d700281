#include "soma/assays/assays.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "soma/assays/stats.hpp"
#include "soma/numcore/linalg.hpp"

namespace soma {

namespace {

double squared_error(const Tensor& pred, const std::array<double, 8>& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (pred[i] - x[i]) * (pred[i] - x[i]);
  return s / static_cast<double>(x.size());
}

double euclid(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// One frozen perception/decision step; carries the quantities the next step needs.
struct FrozenStep {
  ForwardVars f;
  int action = 0;
  Tensor x_pred;
  double b_hat_taken = 0.0;
};

FrozenStep frozen_step(Tape& tape, Agent& agent, const Observation& obs, int prev_action, const Tensor& g_prev,
                       double obs_error, double body_error, RoutingSwitch routing, double u_draw) {
  FrozenStep out;
  out.f = agent.forward(tape, obs, prev_action, g_prev, obs_error, body_error, routing);
  out.action = sample_action(out.f.pi.value(), u_draw);
  out.x_pred = agent.predict_observation(tape, out.f.z, tape.constant(one_hot(out.action, kNumActions)), out.f.g).value();
  out.b_hat_taken = out.f.b_hat.value()[static_cast<std::size_t>(out.action)];
  return out;
}

template <typename F>
std::pair<int, bool> window_of(const std::vector<EpisodeLog>& logs, int window, F&& visit) {
  if (logs.empty()) throw ContractError("assay needs at least one training episode");
  if (window < 1) throw ParameterError("assay window must be positive");
  const int n = static_cast<int>(logs.size());
  const int used = std::min(n, window);
  for (int i = n - used; i < n; ++i) visit(logs[static_cast<std::size_t>(i)]);
  return {used, n < window};
}

}  // namespace

OccupancyResult occupancy_assay(const std::vector<EpisodeLog>& logs, int window) {
  OccupancyResult out;
  std::tie(out.episodes_used, out.short_run) = window_of(logs, window, [&](const EpisodeLog& log) {
    for (std::size_t z = 0; z < kNumZones; ++z) out.zones[z] += log.occupancy[z];
  });
  for (auto& z : out.zones) z /= out.episodes_used;
  out.top_right = out.zones[kTopRight];
  for (Zone z = 0; z < kNumZones; ++z)
    if (is_bottom_zone(z)) out.bottom += out.zones[static_cast<std::size_t>(z)];
  return out;
}

ReadinessResult readiness_assay(const std::vector<EpisodeLog>& logs, int window) {
  ReadinessResult out;
  std::tie(out.episodes_used, out.short_run) = window_of(logs, window, [&](const EpisodeLog& log) {
    for (std::size_t a = 0; a < kNumActions; ++a) out.q[a] += log.mean_q[a];
  });
  for (auto& q : out.q) q /= out.episodes_used;
  return out;
}

CalibrationResult calibration_assay(Agent& agent, const GridWorld& env, RoutingSwitch routing, const Tensor& g0,
                                    int states, int steps_per_episode, const RngStream& rng,
                                    const EtaOverride& eta_override) {
  if (states < 2 || steps_per_episode < 1) throw ContractError("calibration needs at least two states");
  CalibrationResult out;
  const int horizon = env.config().tendency_horizon;
  const auto up = static_cast<std::size_t>(Action::Up), down = static_cast<std::size_t>(Action::Down);
  Tape tape;
  tape.set_grad_enabled(false);
  Tensor g = g0;
  for (std::uint64_t episode = 0; static_cast<int>(out.predicted.size()) < states; ++episode) {
    EnvState state = env.initial_state(rng.substream("env-noise").substream(episode));
    const RngStream policy = rng.substream("policy").substream(episode);
    Observation obs = env.observe(state);
    int prev = -1;
    double obs_error = 0.0, body_error = 0.0;
    for (int t = 0; t < steps_per_episode && static_cast<int>(out.predicted.size()) < states; ++t) {
      tape.clear();
      FrozenStep s = frozen_step(tape, agent, obs, prev, g, obs_error, body_error, routing,
                                 policy.uniform_at(static_cast<std::uint64_t>(t)));
      Tensor eta = s.f.eta_hat.value();
      if (eta_override) eta = eta_override(env, state, eta);
      out.predicted.push_back(eta[up] - eta[down]);
      out.oracle.push_back(env.counterfactual_tendency(state, Action::Up, horizon) -
                           env.counterfactual_tendency(state, Action::Down, horizon));
      obs = env.step(state, static_cast<Action>(s.action)).observation;
      obs_error = squared_error(s.x_pred, obs.x);
      body_error = (s.b_hat_taken - obs.b_tilde) * (s.b_hat_taken - obs.b_tilde);
      g = s.f.g.value();
      prev = s.action;
    }
  }
  const auto r = pearson(out.predicted, out.oracle);
  out.degenerate = !r.has_value();
  out.r = r.value_or(0.0);
  return out;
}

const char* condition_name(Condition c) { return c == Condition::Shock ? "shock" : "control"; }

double ShockRollout::injected_total() const {
  // Neumaier summation.
  double s = 0.0, c = 0.0;
  for (const auto& r : shocks) {
    const double t = s + r.delta;
    c += std::abs(s) >= std::abs(r.delta) ? (s - t) + r.delta : (r.delta - t) + s;
    s = t;
  }
  return s + c;
}

ShockRollout shock_rollout(Agent& agent, const GridWorld& env, RoutingSwitch routing, const RngStream& pair_rng,
                           Condition condition, const AssayConfig& cfg) {
  ShockRollout out;
  out.condition = condition;
  Tape tape;
  tape.set_grad_enabled(false);
  EnvState state = env.initial_state(pair_rng.substream("env-noise"));
  const RngStream policy = pair_rng.substream("policy");
  Tensor g = reset_for_rollout(agent.config().d_g());
  int prev = -1;
  double obs_error = 0.0, body_error = 0.0;
  std::optional<FrozenStep> last;

  for (int t = 0; t < cfg.rollout_steps; ++t) {
    if (condition == Condition::Shock && t >= cfg.shock_start && t <= cfg.shock_end)
      env.inject_shock(state, cfg.shock_delta);
    const Observation obs = env.observe(state);
    if (last) {
      obs_error = squared_error(last->x_pred, obs.x);
      body_error = (last->b_hat_taken - obs.b_tilde) * (last->b_hat_taken - obs.b_tilde);
    }
    tape.clear();
    FrozenStep s = frozen_step(tape, agent, obs, prev, g, obs_error, body_error, routing,
                               policy.uniform_at(static_cast<std::uint64_t>(t)));
    g = s.f.g.value();
    out.steps.push_back({t, g, state.u, obs.b_tilde, state.row, state.col, s.action, obs_error, body_error});
    env.step(state, static_cast<Action>(s.action));
    prev = s.action;
    last = std::move(s);
  }
  out.shocks = state.shocks;
  return out;
}

double shock_magnitude(const ShockRollout& control, const ShockRollout& shock, const AssayConfig& cfg) {
  double s = 0.0;
  int n = 0;
  for (int t = cfg.recovery_start; t <= cfg.recovery_end; ++t) {
    const auto i = static_cast<std::size_t>(t);
    if (i >= control.steps.size() || i >= shock.steps.size()) throw ContractError("rollout shorter than recovery window");
    s += shock.steps[i].u - control.steps[i].u;
    ++n;
  }
  return s / n;
}

DisplacementResult pca_displacement(const std::vector<Tensor>& control_g, const std::vector<Tensor>& shock_g,
                                    std::size_t components) {
  if (control_g.empty() || shock_g.empty()) throw ContractError("pca_displacement: empty condition");
  const std::size_t d = control_g.front().size();
  const std::size_t n = control_g.size() + shock_g.size();
  Tensor rows(Shape{n, d});
  std::size_t r = 0;
  for (const auto* set : {&control_g, &shock_g})
    for (const Tensor& g : *set) {
      if (g.size() != d) throw DimensionError("pca_displacement: g vectors differ in length");
      for (std::size_t c = 0; c < d; ++c) rows.at(r, c) = g[c];
      ++r;
    }
  const PcaResult pca = pca_fit_project(rows, components);
  DisplacementResult out;
  out.zero_variance = pca.zero_variance;
  const std::size_t k = std::min<std::size_t>(components, 2);
  auto coords = [&](std::size_t i) {
    std::array<double, 2> p{0.0, 0.0};
    for (std::size_t c = 0; c < k; ++c) p[c] = pca.projected.at(i, c);
    return p;
  };
  std::array<double, 2> mc{}, ms{};
  for (std::size_t i = 0; i < control_g.size(); ++i) {
    out.control_pc.push_back(coords(i));
    for (std::size_t c = 0; c < 2; ++c) mc[c] += out.control_pc.back()[c] / static_cast<double>(control_g.size());
  }
  for (std::size_t i = 0; i < shock_g.size(); ++i) {
    out.shock_pc.push_back(coords(control_g.size() + i));
    for (std::size_t c = 0; c < 2; ++c) ms[c] += out.shock_pc.back()[c] / static_cast<double>(shock_g.size());
  }
  // The distance uses every fitted component, not only the two kept for plotting.
  double dist2 = 0.0;
  for (std::size_t c = 0; c < components; ++c) {
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < control_g.size(); ++i) a += pca.projected.at(i, c);
    for (std::size_t i = 0; i < shock_g.size(); ++i) b += pca.projected.at(control_g.size() + i, c);
    a /= static_cast<double>(control_g.size());
    b /= static_cast<double>(shock_g.size());
    dist2 += (a - b) * (a - b);
  }
  out.displacement = pca.zero_variance ? 0.0 : std::sqrt(dist2);
  const std::size_t steps = std::min(control_g.size(), shock_g.size());
  for (std::size_t i = 0; i < steps; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < components; ++c) {
      const double diff = pca.projected.at(i, c) - pca.projected.at(control_g.size() + i, c);
      s += diff * diff;
    }
    out.curve.push_back(pca.zero_variance ? 0.0 : std::sqrt(s));
  }
  return out;
}

namespace {

std::vector<Tensor> recovery_g(const ShockRollout& r, const AssayConfig& cfg) {
  std::vector<Tensor> out;
  for (const auto& s : r.steps)
    if (s.t >= cfg.recovery_start && s.t <= cfg.recovery_end) out.push_back(s.g);
  if (out.empty()) throw ContractError("rollout has no recovery-window steps");
  return out;
}

}  // namespace

DisplacementResult pca_displacement(const ShockRollout& control, const ShockRollout& shock, const AssayConfig& cfg) {
  return pca_displacement(recovery_g(control, cfg), recovery_g(shock, cfg),
                          static_cast<std::size_t>(cfg.pca_components));
}

Tensor recovery_mean_g(const ShockRollout& r, const AssayConfig& cfg) {
  const auto gs = recovery_g(r, cfg);
  Tensor m(Shape{gs.front().size()}, 0.0);
  for (const Tensor& g : gs)
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += g[i];
  for (auto& v : m.storage()) v /= static_cast<double>(gs.size());
  return m;
}

std::uint64_t ProbeSet::hash() const {
  std::uint64_t h = fnv1a64("probeset");
  auto fold_double = [&](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = mix64(h ^ bits);
  };
  for (const Probe& p : probes) {
    for (double v : p.obs.x) fold_double(v);
    fold_double(p.obs.b_tilde);
    for (double v : p.obs.silhouette) fold_double(v);
    h = mix64(h ^ static_cast<std::uint64_t>(p.prev_action + 1));
  }
  return h;
}

ProbeSet make_probe_set(const GridWorld& env, const RngStream& rng, int count) {
  if (count < 1) throw ParameterError("probe count must be positive");
  ProbeSet set;
  EnvState state = env.initial_state(rng.substream("env-noise"));
  const RngStream actions = rng.substream("actions");
  for (std::uint64_t t = 0; static_cast<int>(set.probes.size()) < count; ++t) {
    const auto a = static_cast<int>(actions.bits_at(t) % kNumActions);
    const StepOutcome o = env.step(state, static_cast<Action>(a));
    if (t % 2 == 0) set.probes.push_back({o.observation, a});
  }
  return set;
}

ProbeResult same_state_probe(Agent& agent, const Tensor& g_control, const Tensor& g_shock, const ProbeSet& probes) {
  if (probes.probes.empty()) throw ContractError("same_state_probe: empty probe set");
  Tape tape;
  tape.set_grad_enabled(false);
  const MetricGeometry mc = agent.metric_from_g(g_control);
  const MetricGeometry ms = agent.metric_from_g(g_shock);
  const std::vector<double> ec = symmetric_eigenvalues(mc.M), es = symmetric_eigenvalues(ms.M);
  double spectrum = 0.0;
  for (std::size_t i = 0; i < ec.size(); ++i) spectrum += (ec[i] - es[i]) * (ec[i] - es[i]);

  ProbeResult out;
  for (const Probe& p : probes.probes) {
    tape.clear();
    Var z = agent.encode(tape, p.obs);
    Var prev = tape.constant(one_hot(p.prev_action, kNumActions));
    auto state_under = [&](const Tensor& g, const Tensor& m) {
      return agent.policy_state(tape, z, quadratic_features(z, tape.constant(m)), prev, tape.constant(g)).value();
    };
    out.state_distance += euclid(state_under(g_control, mc.M), state_under(g_shock, ms.M));
  }
  out.state_distance /= static_cast<double>(probes.probes.size());
  // M depends on g alone, so every probe sees the same pair of spectra.
  out.spectrum_distance = std::sqrt(spectrum);
  return out;
}

bool pre_shock_identical(const ShockRollout& control, const ShockRollout& shock, int shock_start) {
  for (int t = 0; t < shock_start; ++t) {
    const auto i = static_cast<std::size_t>(t);
    if (i >= control.steps.size() || i >= shock.steps.size()) return false;
    const RolloutStep &a = control.steps[i], &b = shock.steps[i];
    if (!(a.g == b.g) || a.u != b.u || a.b_tilde != b.b_tilde || a.row != b.row || a.col != b.col ||
        a.action != b.action || a.obs_error != b.obs_error || a.body_error != b.body_error)
      return false;
  }
  return true;
}

RunAssays assay_run(TrainingRun& run, const std::vector<EpisodeLog>& logs, const ProbeSet& probes,
                    const RngStream& assay_rng, const AssayConfig& cfg) {
  RunAssays out;
  AssayRow& row = out.row;
  row.cohort = run.cohort().name;
  row.seed = run.seed();

  const OccupancyResult occ = occupancy_assay(logs, cfg.occupancy_window);
  row.occupancy = occ.zones;
  row.top_right_occupancy = occ.top_right;
  row.bottom_occupancy = occ.bottom;
  row.short_run = occ.short_run;
  row.q_by_action = readiness_assay(logs, cfg.occupancy_window).q;

  Agent& agent = run.agent();
  const RoutingSwitch routing{run.cohort().body_to_g};
  out.calibration = calibration_assay(agent, run.env(), routing, run.g(), cfg.calibration_states,
                                      run.trainer_config().steps_per_episode, assay_rng.substream("calibration"));
  row.eta_calibration_r = out.calibration.r;
  row.calibration_degenerate = out.calibration.degenerate;

  const RngStream pair = assay_rng.substream("shock");
  out.control = shock_rollout(agent, run.env(), routing, pair, Condition::Control, cfg);
  out.shock = shock_rollout(agent, run.env(), routing, pair, Condition::Shock, cfg);
  row.pre_shock_identical = pre_shock_identical(out.control, out.shock, cfg.shock_start);
  row.shock_injected = out.shock.injected_total();
  row.shock_magnitude = shock_magnitude(out.control, out.shock, cfg);

  out.displacement = pca_displacement(out.control, out.shock, cfg);
  row.pca_displacement = out.displacement.displacement;
  row.pca_zero_variance = out.displacement.zero_variance;

  const ProbeResult probe =
      same_state_probe(agent, recovery_mean_g(out.control, cfg), recovery_mean_g(out.shock, cfg), probes);
  row.state_distance = probe.state_distance;
  row.spectrum_distance = probe.spectrum_distance;
  return out;
}

}  // namespace soma
