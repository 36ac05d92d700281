#include "doctest.h"

#include <chrono>
#include <cmath>
#include <cstring>

#include "soma/harness/checkpoint.hpp"
#include "soma/trainer/trainer.hpp"

using namespace soma;

namespace {

TrainerConfig short_trainer(int episodes = 6, int warmup = 2, int steps = 40) {
  TrainerConfig t;
  t.episodes = episodes;
  t.warmup_episodes = warmup;
  t.steps_per_episode = steps;
  t.update_interval = 20;
  return t;
}

TrainingRun make_run(const std::string& cohort = "full", int seed = 0, TrainerConfig t = short_trainer()) {
  return TrainingRun(GridConfig{}, AgentConfig{}, t, make_cohort(cohort), seed, 0);
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

bool same_parameters(TrainingRun& a, TrainingRun& b) {
  auto pa = a.agent().parameters(), pb = b.agent().parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!(pa[i]->value == pb[i]->value)) return false;
  return true;
}

Tensor snapshot(const std::vector<Parameter*>& ps) {
  std::vector<double> all;
  for (const Parameter* p : ps) all.insert(all.end(), p->value.storage().begin(), p->value.storage().end());
  return Tensor::vector(all);
}

}  // namespace

TEST_CASE("cohort switches") {
  const CohortConfig full = make_cohort("full"), nocon = make_cohort("no_conation"), nbg = make_cohort("no_body_to_g");
  CHECK((full.body_to_g && full.conative_on));
  CHECK((nocon.body_to_g && !nocon.conative_on));
  CHECK((!nbg.body_to_g && nbg.conative_on));
  CHECK_THROWS_AS(make_cohort("nope"), ParameterError);
}

TEST_CASE("intrinsic advantages") {
  SUBCASE("two-step hand computation") {
    // returns: R1 = -e1, R0 = -e0 - gamma e1; baseline is their mean.
    const double e0 = 0.2, e1 = 0.5, gamma = 0.95;
    const double r0 = -e0 - gamma * e1, r1 = -e1, base = 0.5 * (r0 + r1);
    const auto adv = intrinsic_advantages({e0, e1}, gamma);
    CHECK(adv[0] == doctest::Approx(r0 - base).epsilon(1e-15));
    CHECK(adv[1] == doctest::Approx(r1 - base).epsilon(1e-15));
  }
  SUBCASE("advantages sum to zero") {
    const auto adv = intrinsic_advantages({0.1, 0.4, 0.05, 0.3, 0.2}, 0.95);
    double s = 0.0;
    for (double a : adv) s += a;
    CHECK(std::abs(s) < 1e-15);
  }
}

TEST_CASE("actor loss") {
  Tape tape;
  SUBCASE("uniform policy, zero errors: entropy term only") {
    std::vector<Var> logp, ent;
    for (int i = 0; i < 3; ++i) {
      logp.push_back(tape.constant(std::log(0.2)));
      ent.push_back(tape.constant(std::log(5.0)));
    }
    CHECK(actor_loss(tape, logp, ent, {0.0, 0.0, 0.0}, 0.95, 0.01).item() ==
          doctest::Approx(-0.01 * std::log(5.0)).epsilon(1e-15));
  }
  SUBCASE("zero advantages give no score gradient") {
    Parameter theta("theta", Tensor::scalar(0.3));
    Var lp = tape.param(theta);
    tape.backward(actor_loss(tape, {lp, lp, lp}, {tape.constant(0.0), tape.constant(0.0), tape.constant(0.0)},
                             {0.0, 0.0, 0.0}, 0.95, 0.01));
    CHECK(theta.grad.item() == 0.0);
  }
  SUBCASE("two-step value") {
    const double e0 = 0.2, e1 = 0.5;
    const auto adv = intrinsic_advantages({e0, e1}, 0.95);
    std::vector<Var> logp{tape.constant(std::log(0.3)), tape.constant(std::log(0.6))};
    std::vector<Var> ent{tape.constant(1.2), tape.constant(0.9)};
    const double want = 0.5 * (-(std::log(0.3) * adv[0] + std::log(0.6) * adv[1]) - 0.01 * (1.2 + 0.9));
    CHECK(actor_loss(tape, logp, ent, {e0, e1}, 0.95, 0.01).item() == doctest::Approx(want).epsilon(1e-14));
  }
  SUBCASE("empty trajectory") { CHECK_THROWS_AS(actor_loss(tape, {}, {}, {}, 0.95, 0.01), ContractError); }
}

TEST_CASE("body loss and targets") {
  const GridWorld env;
  const EnvState s = env.initial_state(RngStream(1));
  const BodyTargets tg = body_targets(env, s);
  Tape tape;
  SUBCASE("perfect decoder") {
    CHECK(body_loss(tape, tape.constant(tg.eta), tape.constant(tg.b_next), tg.eta, tg.b_next).item() == 0.0);
  }
  SUBCASE("zero decoder, one-step STAY target at the centre") {
    GridConfig one;
    one.tendency_horizon = 1;
    const GridWorld env1(one);
    const BodyTargets t1 = body_targets(env1, s);
    const auto stay = static_cast<std::size_t>(Action::Stay);
    CHECK(t1.eta[stay] == doctest::Approx(-0.002).epsilon(1e-15));
    const Tensor zeros(Shape{5}, 0.0);
    double want = 0.0;
    for (std::size_t a = 0; a < 5; ++a) want += t1.eta[a] * t1.eta[a] / 5.0 + t1.b_next[a] * t1.b_next[a] / 5.0;
    CHECK(body_loss(tape, tape.constant(zeros), tape.constant(zeros), t1.eta, t1.b_next).item() ==
          doctest::Approx(want).epsilon(1e-14));
  }
  SUBCASE("relabelling actions on both sides") {
    RngStream rng(3);
    Tensor eta(Shape{5}), b(Shape{5});
    for (auto& v : eta.storage()) v = rng.uniform(-1, 1);
    for (auto& v : b.storage()) v = rng.uniform(0, 1);
    const double base = body_loss(tape, tape.constant(eta), tape.constant(b), tg.eta, tg.b_next).item();
    auto roll = [](Tensor t) {
      Tensor o = t;
      for (std::size_t i = 0; i < 5; ++i) o[i] = t[(i + 2) % 5];
      return o;
    };
    const double rolled =
        body_loss(tape, tape.constant(roll(eta)), tape.constant(roll(b)), roll(tg.eta), roll(tg.b_next)).item();
    CHECK(rolled == doctest::Approx(base).epsilon(1e-14));
  }
}

TEST_CASE("loss accounting") {
  TrainingRun run = make_run();
  const LossBreakdown warm = run.combine(1.0, 2.0, 3.0, 4.0, true);
  CHECK(warm.total == 1.0);
  const LossBreakdown b = run.combine(1.0, 2.0, 3.0, 4.0, false);
  CHECK(b.total == doctest::Approx(1.0 + 2.0 + 1.0 * 3.0 + 0.5 * 4.0).epsilon(1e-12));
  TrainingRun nocon = make_run("no_conation");
  CHECK(nocon.combine(1.0, 2.0, 3.0, 4.0, false).total == doctest::Approx(6.0).epsilon(1e-12));

  for (int e = 0; e < 4; ++e) {
    const EpisodeLog log = run.train_episode();
    const auto& l = log.losses;
    const double want = log.warmup ? l.obs_pred : l.obs_pred + l.actor + l.body + 0.5 * l.conative;
    CHECK(std::abs(l.total - want) <= 1e-9);
  }
}

TEST_CASE("warmup trains the predictive backbone only") {
  TrainingRun run = make_run();
  REQUIRE(run.in_warmup());
  Agent& a = run.agent();
  const Tensor before = snapshot({&a.policy_head.weight, &a.policy_head.bias, &a.body_decoder.weight,
                                  &a.body_decoder.bias, &a.state_head.weight, &a.metric_net.weight});
  const Tensor enc_before = snapshot(a.encoder_obs.parameters());
  run.train_episode();
  CHECK(snapshot({&a.policy_head.weight, &a.policy_head.bias, &a.body_decoder.weight, &a.body_decoder.bias,
                  &a.state_head.weight, &a.metric_net.weight}) == before);
  CHECK_FALSE(snapshot(a.encoder_obs.parameters()) == enc_before);
}

TEST_CASE("gradient firewall matrix") {
  for (const auto& name : kCohortNames) {
    TrainingRun run = make_run(std::string(name), 1);
    run.train_episode();
    run.train_episode();
    CHECK_MESSAGE(gradient_presence(run) == expected_wiring(), name);
  }
}

TEST_CASE("determinism") {
  TrainingRun a = make_run("full", 3), b = make_run("full", 3);
  for (int e = 0; e < 4; ++e) {
    const LossBreakdown la = a.train_episode().losses, lb = b.train_episode().losses;
    CHECK(same_bits(la.obs_pred, lb.obs_pred));
    CHECK(same_bits(la.actor, lb.actor));
    CHECK(same_bits(la.body, lb.body));
    CHECK(same_bits(la.conative, lb.conative));
    CHECK(same_bits(la.total, lb.total));
  }
  CHECK(same_parameters(a, b));
  CHECK(a.g() == b.g());
  TrainingRun c = make_run("full", 4);
  c.train_episode();
  CHECK_FALSE(c.g() == make_run("full", 3).g());
}

TEST_CASE("resume matches an uninterrupted run") {
  RunConfig cfg;
  cfg.trainer = short_trainer(6, 2, 40);
  TrainingRun straight(cfg.env, cfg.agent, cfg.trainer, make_cohort("no_body_to_g"), 2, cfg.harness.master_seed);
  TrainingRun first(cfg.env, cfg.agent, cfg.trainer, make_cohort("no_body_to_g"), 2, cfg.harness.master_seed);
  std::vector<EpisodeLog> history;
  for (int e = 0; e < 3; ++e) history.push_back(first.train_episode());
  const Checkpoint ck = parse_checkpoint(serialize_checkpoint(capture_checkpoint(first, cfg, history)));
  TrainingRun resumed = restore_run(ck, cfg);
  CHECK(resumed.next_episode() == 3);
  LossBreakdown last_straight, last_resumed;
  for (int e = 0; e < 6; ++e) last_straight = straight.train_episode().losses;
  while (!resumed.done()) last_resumed = resumed.train_episode().losses;
  CHECK(same_parameters(straight, resumed));
  CHECK(straight.g() == resumed.g());
  CHECK(same_bits(last_straight.total, last_resumed.total));
}

TEST_CASE("trained run keeps g slower than z") {
  TrainingRun run = make_run("full", 0, short_trainer(8, 2, 60));
  int slower = 0, total = 0;
  while (!run.done()) {
    const EpisodeLog log = run.train_episode();
    ++total;
    if (log.mean_abs_dg < log.mean_abs_dz) ++slower;
  }
  CHECK(slower == total);
}

TEST_CASE("episodes start from the centre with a neutral body") {
  TrainingRun run = make_run();
  const EpisodeLog log = run.train_episode(true);
  REQUIRE(log.trajectory.size() == 40);
  const auto& first = log.trajectory.front();
  CHECK(std::abs(first.row - 7) + std::abs(first.col - 7) <= 1);
  const EnvState s = run.env().initial_state(run.env_noise_stream(1));
  CHECK(s.u == 0.0);
  CHECK(run.env().observe(s).b_tilde == 0.5);
}

TEST_CASE("smoke-sized training finishes quickly") {
  const auto t0 = std::chrono::steady_clock::now();
  TrainerConfig t = short_trainer(10, 3, 200);
  for (int seed = 0; seed < 2; ++seed) {
    TrainingRun run = make_run("full", seed, t);
    while (!run.done()) run.train_episode();
    CHECK_THROWS_AS(run.train_episode(), ContractError);
  }
  CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 60.0);
}
