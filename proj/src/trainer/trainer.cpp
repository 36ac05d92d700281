#include "soma/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace soma {

namespace {

Var mean_of(Tape& tape, const std::vector<Var>& terms) {
  if (terms.empty()) return tape.constant(0.0);
  return mean(concat(std::span<const Var>(terms)));
}

double mean_abs_diff(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace

CohortConfig make_cohort(std::string_view name) {
  if (name == "full") return {"full", true, true};
  if (name == "no_conation") return {"no_conation", true, false};
  if (name == "no_body_to_g") return {"no_body_to_g", false, true};
  std::string valid;
  for (auto n : kCohortNames) valid += (valid.empty() ? "" : ", ") + std::string(n);
  throw ParameterError("unknown cohort '" + std::string(name) + "'; valid cohorts: " + valid);
}

std::vector<double> intrinsic_advantages(const std::vector<double>& prediction_errors, double gamma) {
  const std::size_t n = prediction_errors.size();
  std::vector<double> ret(n);
  double acc = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    acc = -prediction_errors[i] + gamma * acc;
    ret[i] = acc;
  }
  const double baseline = n ? std::accumulate(ret.begin(), ret.end(), 0.0) / static_cast<double>(n) : 0.0;
  for (auto& r : ret) r -= baseline;
  return ret;
}

Var actor_loss(Tape& tape, const std::vector<Var>& log_pi_taken, const std::vector<Var>& entropies,
               const std::vector<double>& prediction_errors, double gamma, double entropy_coef) {
  const std::size_t n = log_pi_taken.size();
  if (n == 0) throw ContractError("actor_loss: empty trajectory");
  if (entropies.size() != n || prediction_errors.size() != n)
    throw DimensionError("actor_loss: trajectory fields have different lengths");
  const std::vector<double> adv = intrinsic_advantages(prediction_errors, gamma);
  Var logp = concat(std::span<const Var>(log_pi_taken));
  Var ent = concat(std::span<const Var>(entropies));
  Var score = dot(logp, tape.constant(Tensor::vector(adv)));
  Var total = sub(scale(score, -1.0), scale(sum(ent), entropy_coef));
  return scale(total, 1.0 / static_cast<double>(n));
}

Var body_loss(Tape& tape, Var eta_hat, Var b_hat, const Tensor& eta_target, const Tensor& b_target) {
  return add(mse(eta_hat, tape.constant(eta_target)), mse(b_hat, tape.constant(b_target)));
}

BodyTargets body_targets(const GridWorld& env, const EnvState& s) {
  BodyTargets t{Tensor(Shape{kNumActions}), Tensor(Shape{kNumActions})};
  for (Action a : kAllActions) {
    const auto i = static_cast<std::size_t>(a);
    t.eta[i] = env.counterfactual_tendency(s, a, env.config().tendency_horizon);
    t.b_next[i] = env.counterfactual_readout(s, a);
  }
  return t;
}

TrainingRun::TrainingRun(const GridConfig& env_cfg, const AgentConfig& agent_cfg, const TrainerConfig& trainer_cfg,
                         CohortConfig cohort, int seed, std::uint64_t master_seed)
    : env_(env_cfg),
      trainer_cfg_(trainer_cfg),
      cohort_(std::move(cohort)),
      seed_(seed),
      master_seed_(master_seed),
      run_root_(RngStreams(master_seed).stream("run").substream(static_cast<std::uint64_t>(seed))),
      agent_(agent_cfg, run_root_.substream("init")),
      g_(reset_for_rollout(agent_cfg.d_g())) {
  adam_.reset(agent_.parameters());
}

RngStream TrainingRun::env_noise_stream(int episode) const {
  return run_root_.substream("env-noise").substream(static_cast<std::uint64_t>(episode));
}

RngStream TrainingRun::policy_stream(int episode) const {
  return run_root_.substream("policy-sampling").substream(static_cast<std::uint64_t>(episode));
}

void TrainingRun::restore(int next_episode, Tensor g, AdamState adam) {
  episode_ = next_episode;
  g_ = std::move(g);
  adam_ = std::move(adam);
}

LossBreakdown TrainingRun::combine(double obs_pred, double actor, double body, double conative, bool warmup) const {
  LossBreakdown b{obs_pred, actor, body, conative, obs_pred};
  if (!warmup) {
    b.total += actor + trainer_cfg_.lambda_body * body;
    if (cohort_.conative_on) b.total += trainer_cfg_.lambda_con * conative;
  }
  return b;
}

struct EpisodeCursor {
  EnvState state;
  Observation obs;
  Tensor g_prev;
  Tensor z_prev;
  RngStream policy_rng;
  int prev_action = -1;
  double obs_error = 0.0;
  double body_error = 0.0;
  int t = 0;
  std::array<int, kNumZones> zone_counts{};
  double dg_sum = 0.0;
  double dz_sum = 0.0;
  LossBreakdown loss_sums;
  EpisodeLog log;
};

EpisodeCursor TrainingRun::begin_episode() const {
  if (trainer_cfg_.steps_per_episode < 1) throw ContractError("episode must have at least one step");
  EpisodeCursor cur;
  // Body state resets each episode; g carries over with decay.
  cur.state = env_.initial_state(env_noise_stream(episode_));
  cur.obs = env_.observe(cur.state);
  cur.g_prev = decay_across_episode(g_, agent_.perspective.config().episode_decay);
  cur.policy_rng = policy_stream(episode_);
  cur.log.episode = episode_;
  cur.log.warmup = in_warmup();
  return cur;
}

EpisodeGraph TrainingRun::record_steps(Tape& tape, EpisodeCursor& cur, int n, bool keep_trajectory) {
  const RoutingSwitch routing{cohort_.body_to_g};
  std::vector<Var> obs_terms, body_terms, con_terms, logp_taken, entropies;
  std::vector<double> errors;
  EpisodeLog& log = cur.log;

  for (int i = 0; i < n; ++i, ++cur.t) {
    ForwardVars f = agent_.forward(tape, cur.obs, cur.prev_action, cur.g_prev, cur.obs_error, cur.body_error, routing);
    const int a = sample_action(f.pi.value(), cur.policy_rng.uniform_at(static_cast<std::uint64_t>(cur.t)));
    Var x_pred = agent_.predict_observation(tape, f.z, tape.constant(one_hot(a, kNumActions)), f.g);

    const BodyTargets targets = body_targets(env_, cur.state);
    body_terms.push_back(body_loss(tape, f.eta_hat, f.b_hat, targets.eta, targets.b_next));
    con_terms.push_back(conative_loss(tape, f.q, f.pi_conative));
    logp_taken.push_back(pick(f.log_pi, static_cast<std::size_t>(a)));
    entropies.push_back(scale(dot(f.pi, f.log_pi), -1.0));
    const double b_hat_taken = f.b_hat.value()[static_cast<std::size_t>(a)];

    const StepOutcome outcome = env_.step(cur.state, static_cast<Action>(a));
    Var obs_term = mse(x_pred, tape.constant(Tensor::vector(std::span<const double>(outcome.observation.x))));
    obs_terms.push_back(obs_term);
    errors.push_back(obs_term.item());

    cur.obs_error = obs_term.item();
    cur.body_error = (b_hat_taken - outcome.observation.b_tilde) * (b_hat_taken - outcome.observation.b_tilde);

    for (std::size_t k = 0; k < kNumActions; ++k) {
      log.mean_q[k] += f.q[k];
      log.mean_pi[k] += f.pi.value()[k];
    }
    cur.dg_sum += mean_abs_diff(f.g.value(), cur.g_prev);
    if (cur.t > 0) cur.dz_sum += mean_abs_diff(f.z.value(), cur.z_prev);
    cur.z_prev = f.z.value();
    const Zone zone = env_.zone_of(cur.state.row, cur.state.col);
    ++cur.zone_counts[static_cast<std::size_t>(zone)];
    if (keep_trajectory)
      log.trajectory.push_back({cur.state.t, cur.state.row, cur.state.col, a, cur.state.u,
                                outcome.observation.b_tilde, outcome.moved, zone});

    cur.g_prev = f.g.value();
    cur.prev_action = a;
    cur.obs = outcome.observation;
  }

  EpisodeGraph out;
  out.obs_pred = mean_of(tape, obs_terms);
  out.body = mean_of(tape, body_terms);
  out.conative = mean_of(tape, con_terms);
  out.actor = actor_loss(tape, logp_taken, entropies, errors, trainer_cfg_.gamma, trainer_cfg_.entropy_coef);
  out.final_g = cur.g_prev;

  const double w = static_cast<double>(n);
  cur.loss_sums.obs_pred += w * out.obs_pred.item();
  cur.loss_sums.actor += w * out.actor.item();
  cur.loss_sums.body += w * out.body.item();
  cur.loss_sums.conative += w * out.conative.item();
  return out;
}

EpisodeLog TrainingRun::finish_episode(EpisodeCursor& cur) const {
  EpisodeLog log = std::move(cur.log);
  const double n = static_cast<double>(cur.t);
  for (std::size_t z = 0; z < kNumZones; ++z) log.occupancy[z] = cur.zone_counts[z] / n;
  for (std::size_t i = 0; i < kNumActions; ++i) {
    log.mean_q[i] /= n;
    log.mean_pi[i] /= n;
  }
  log.mean_abs_dg = cur.dg_sum / n;
  log.mean_abs_dz = cur.t > 1 ? cur.dz_sum / (n - 1) : 0.0;
  log.final_u = cur.state.u;
  const LossBreakdown& s = cur.loss_sums;
  log.losses = combine(s.obs_pred / n, s.actor / n, s.body / n, s.conative / n, log.warmup);
  return log;
}

EpisodeGraph TrainingRun::record_episode(Tape& tape, bool keep_trajectory) {
  EpisodeCursor cur = begin_episode();
  EpisodeGraph graph = record_steps(tape, cur, trainer_cfg_.steps_per_episode, keep_trajectory);
  graph.log = finish_episode(cur);
  return graph;
}

EpisodeLog TrainingRun::train_episode(bool keep_trajectory) {
  if (done()) throw ContractError("training run already completed");
  const int steps = trainer_cfg_.steps_per_episode;
  const int interval = trainer_cfg_.update_interval > 0 ? std::min(trainer_cfg_.update_interval, steps) : steps;
  try {
    EpisodeCursor cur = begin_episode();
    const bool warm = cur.log.warmup;
    while (cur.t < steps) {
      Tape tape;
      EpisodeGraph graph = record_steps(tape, cur, std::min(interval, steps - cur.t), keep_trajectory);
      Var total = graph.obs_pred;
      if (!warm) {
        total = add(total, add(graph.actor, scale(graph.body, trainer_cfg_.lambda_body)));
        if (cohort_.conative_on) total = add(total, scale(graph.conative, trainer_cfg_.lambda_con));
      }
      if (!std::isfinite(total.item())) throw NonFiniteError("non-finite total loss");
      agent_.zero_grad();
      tape.backward(total);
      adam_step(agent_.parameters(), adam_, trainer_cfg_.lr);
      agent_.zero_grad();
    }
    g_ = cur.g_prev;
    EpisodeLog log = finish_episode(cur);
    ++episode_;
    return log;
  } catch (const NonFiniteError& e) {
    throw TrainingAborted(episode_, "episode " + std::to_string(episode_) + ": " + e.what());
  }
}

FirewallMatrix gradient_presence(TrainingRun& run) {
  Tape tape;
  EpisodeGraph graph = run.record_episode(tape);
  Agent& agent = run.agent();
  FirewallMatrix out;
  const std::map<std::string, Var> losses{
      {"obs_pred", graph.obs_pred}, {"actor", graph.actor}, {"body", graph.body}, {"conative", graph.conative}};
  for (const auto& [name, loss] : losses) {
    agent.zero_grad();
    tape.backward(loss);
    for (auto& [group, params] : agent.parameter_groups()) {
      bool any = false;
      for (const Parameter* p : params) any = any || !p->grad_is_zero();
      out[name][group] = any;
    }
  }
  agent.zero_grad();
  return out;
}

FirewallMatrix expected_wiring() {
  const std::vector<std::string> groups{"encoders",    "metric_net",   "state_head", "policy_head",
                                        "obs_decoder", "body_decoder", "perspective"};
  const std::map<std::string, std::vector<std::string>> reach{
      {"obs_pred", {"encoders", "obs_decoder", "perspective"}},
      {"body", {"encoders", "body_decoder", "perspective"}},
      {"actor", {"encoders", "state_head", "policy_head"}},
      {"conative", {"policy_head"}},
  };
  FirewallMatrix m;
  for (const auto& [loss, allowed] : reach)
    for (const auto& g : groups) m[loss][g] = std::find(allowed.begin(), allowed.end(), g) != allowed.end();
  return m;
}

}  // namespace soma
