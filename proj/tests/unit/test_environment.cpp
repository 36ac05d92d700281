#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "soma/env/gridworld.hpp"

using namespace soma;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double affordance_oracle(int row) { return sigmoid(1.6 * (7 - row) * (3.0 / 7.0)) - 0.5; }
double eq8(double u, bool moved, int row) {
  return 0.995 * u - 0.002 - (moved ? 0.001 : 0.0) + 0.05 * affordance_oracle(row);
}

EnvState at(const GridWorld& env, int row, int col, double u = 0.0, std::uint64_t key = 1) {
  EnvState s = env.initial_state(RngStream(key));
  s.row = row;
  s.col = col;
  s.u = u;
  return s;
}

}  // namespace

TEST_CASE("affordance profile") {
  const GridWorld env;
  CHECK(env.affordance(7) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(env.affordance(0) == doctest::Approx(sigmoid(4.8) - 0.5).epsilon(1e-15));
  CHECK(env.affordance(0) == doctest::Approx(0.4918).epsilon(1e-4));
  CHECK(env.affordance(14) == doctest::Approx(-env.affordance(0)).epsilon(1e-15));
  CHECK(env.affordance(0) >= 0.45);
  CHECK(env.affordance(0) <= 0.5);
  for (int r = 1; r < 15; ++r) CHECK(env.affordance(r) < env.affordance(r - 1));
  for (int r = 0; r < 15; ++r) CHECK(env.affordance(r) == doctest::Approx(affordance_oracle(r)).epsilon(1e-14));
  CHECK_THROWS_AS(env.affordance(-1), ContractError);
  CHECK_THROWS_AS(env.affordance(15), ContractError);
}

TEST_CASE("noise gradient") {
  const GridWorld env;
  for (int c = 0; c < 15; ++c) CHECK(env.noise_std(c) == doctest::Approx(0.40 + (0.05 - 0.40) * c / 14.0).epsilon(1e-15));
  for (int c = 1; c < 15; ++c) CHECK(env.noise_std(c) < env.noise_std(c - 1));
}

TEST_CASE("step_body follows the allostatic update") {
  const GridWorld env;
  CHECK(env.step_body(0.0, false, 7, 7) == doctest::Approx(-0.002).epsilon(1e-12));
  CHECK(env.step_body(0.0, true, 7, 7) == doctest::Approx(-0.003).epsilon(1e-12));
  CHECK(env.step_body(1.0, false, 0, 3) == doctest::Approx(0.995 - 0.002 + 0.05 * affordance_oracle(0)).epsilon(1e-14));
  CHECK(env.step_body(1.0, false, 0, 3) == doctest::Approx(1.01759).epsilon(1e-5));
  RngStream rng(4);
  for (int i = 0; i < 500; ++i) {
    const double u = rng.uniform(-10, 10);
    const bool moved = rng.uniform() < 0.5;
    const int row = static_cast<int>(rng.next_bits() % 15);
    CHECK(std::abs(env.step_body(u, moved, row, 0) - eq8(u, moved, row)) <= 1e-12);
  }
}

TEST_CASE("observation") {
  SUBCASE("b_tilde at u = 0") {
    const GridWorld env;
    CHECK(env.observe(at(env, 7, 7, 0.0)).b_tilde == 0.5);
    CHECK(env.observe(at(env, 7, 7, 1.3)).b_tilde == sigmoid(1.3));
  }
  SUBCASE("noise-free observation is the texture and neighbour affordances") {
    GridConfig cfg;
    cfg.sigma_left = cfg.sigma_right = 0.0;
    cfg.sigma_sil = 0.0;
    const GridWorld env(cfg);
    const Observation o = env.observe(at(env, 0, 14));
    const int dr[8] = {-1, -1, -1, 0, 0, 1, 1, 1}, dc[8] = {-1, 0, 1, -1, 1, -1, 0, 1};
    for (int i = 0; i < 8; ++i) {
      const int r = dr[i], c = 14 + dc[i];
      const bool inside = r >= 0 && c <= 14;
      CHECK(o.x[static_cast<std::size_t>(i)] == (inside ? c / 14.0 : 0.0));
    }
    CHECK(o.silhouette[0] == env.affordance(0));  // up: off-grid, own cell
    CHECK(o.silhouette[1] == env.affordance(1));
    CHECK(o.silhouette[2] == env.affordance(0));
    CHECK(o.silhouette[3] == env.affordance(0));  // right: off-grid
  }
  SUBCASE("Monte-Carlo noise std at the extreme columns") {
    const GridWorld env;
    for (int col : {0, 14}) {
      EnvState s = at(env, 7, col, 0.0, 99 + col);
      double sum = 0, sq = 0;
      const int n = 100000;
      for (int t = 0; t < n; ++t) {
        s.t = t;
        const double e = env.observe(s).x[1] - col / 14.0;
        sum += e;
        sq += e * e;
      }
      const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
      if (col == 0) {
        CHECK(sd >= 0.36);
        CHECK(sd <= 0.44);
      } else {
        CHECK(sd >= 0.045);
        CHECK(sd <= 0.055);
      }
    }
  }
  SUBCASE("empirical noise std decreases with column") {
    const GridWorld env;
    std::vector<double> sds;
    for (int col = 0; col < 15; ++col) {
      EnvState s = at(env, 7, col, 0.0, 500 + col);
      double sq = 0;
      const int n = 20000;
      for (int t = 0; t < n; ++t) {
        s.t = t;
        const double e = env.observe(s).x[6] - col / 14.0;
        sq += e * e;
      }
      sds.push_back(std::sqrt(sq / n));
    }
    for (std::size_t c = 1; c < sds.size(); ++c) CHECK(sds[c] < sds[c - 1]);
  }
}

TEST_CASE("step") {
  const GridWorld env;
  SUBCASE("STAY at the centre") {
    EnvState s = at(env, 7, 7);
    const StepOutcome o = env.step(s, Action::Stay);
    CHECK_FALSE(o.moved);
    CHECK(s.row == 7);
    CHECK(s.col == 7);
    CHECK(s.u == doctest::Approx(-0.002).epsilon(1e-12));
    CHECK(s.t == 1);
    CHECK(o.observation.b_tilde == doctest::Approx(sigmoid(s.u)).epsilon(1e-15));
  }
  SUBCASE("UP against the top wall") {
    EnvState s = at(env, 0, 4);
    const StepOutcome o = env.step(s, Action::Up);
    CHECK_FALSE(o.moved);
    CHECK(s.row == 0);
    CHECK(s.u == doctest::Approx(eq8(0.0, false, 0)).epsilon(1e-12));
  }
  SUBCASE("UP from the centre uses the post-move row") {
    EnvState s = at(env, 7, 7);
    const StepOutcome o = env.step(s, Action::Up);
    CHECK(o.moved);
    CHECK(s.row == 6);
    CHECK(s.u == doctest::Approx(-0.003 + 0.05 * affordance_oracle(6)).epsilon(1e-12));
  }
}

TEST_CASE("counterfactual tendency") {
  const GridWorld env;
  EnvState s = at(env, 7, 7);
  CHECK(env.counterfactual_tendency(s, Action::Stay, 1) == doctest::Approx(-0.002).epsilon(1e-12));
  double u = 0.0;
  int row = 7;
  for (int i = 0; i < 4; ++i) u = eq8(u, true, --row);
  CHECK(env.counterfactual_tendency(s, Action::Up, 4) == doctest::Approx(u).epsilon(1e-14));
  CHECK_THROWS_AS(env.counterfactual_tendency(s, Action::Up, 0), ContractError);

  RngStream rng(8);
  for (int i = 0; i < 300; ++i) {
    EnvState p = at(env, 4 + static_cast<int>(rng.next_bits() % 7), static_cast<int>(rng.next_bits() % 15),
                    rng.uniform(-3, 3));
    const std::uint64_t before = state_hash(p);
    CHECK(env.counterfactual_tendency(p, Action::Up, 4) > env.counterfactual_tendency(p, Action::Down, 4));
    env.counterfactual_readout(p, Action::Left);
    CHECK(state_hash(p) == before);
  }
}

TEST_CASE("shock injection") {
  const GridWorld env;
  EnvState s = at(env, 7, 7);
  env.inject_shock(s, -0.08);
  CHECK(s.u == -0.08);
  REQUIRE(s.shocks.size() == 1);
  CHECK(s.shocks[0].delta == -0.08);
  EnvState f = at(env, 7, 7);
  for (int i = 0; i < 20; ++i) env.inject_shock(f, -0.08);
  CHECK(f.u == doctest::Approx(-1.6).epsilon(1e-14));
  CHECK(f.shocks.size() == 20);
}

TEST_CASE("zones partition the grid") {
  const GridWorld env;
  CHECK(env.zone_of(0, 14) == kTopRight);
  CHECK(zone_name(env.zone_of(0, 14)) == "top-right");
  CHECK(env.zone_of(7, 7) == kMiddleMiddle);
  CHECK(env.zone_of(14, 2) == kBottomLeft);
  std::array<int, kNumZones> counts{};
  for (int r = 0; r < 15; ++r)
    for (int c = 0; c < 15; ++c) {
      const Zone z = env.zone_of(r, c);
      ++counts[static_cast<std::size_t>(z)];
      CHECK(z == (r / 5) * 3 + c / 5);
    }
  for (int n : counts) CHECK(n == 25);
  CHECK_THROWS_AS(env.zone_of(15, 0), ContractError);
}

TEST_CASE("STAY at the middle row drains u monotonically") {
  const GridWorld env;
  EnvState s = at(env, 7, 7);
  for (int t = 0; t < 200; ++t) {
    const double before = s.u;
    env.step(s, Action::Stay);
    CHECK(s.u < before);
  }
}

TEST_CASE("top-row STAY converges to the closed-form fixed point from below") {
  const GridWorld env;
  const double u_star = (-0.002 + 0.05 * affordance_oracle(0)) / (1 - 0.995);
  CHECK(u_star == doctest::Approx(4.518).epsilon(1e-3));
  EnvState s = at(env, 0, 7);
  for (int t = 0; t < 2000; ++t) {
    const double before = s.u;
    env.step(s, Action::Stay);
    CHECK(s.u >= before);
    CHECK(s.u <= u_star);
  }
  CHECK(std::abs(s.u - u_star) <= 1e-3);
}

TEST_CASE("positions stay in the grid under random actions") {
  const GridWorld env;
  EnvState s = env.initial_state(RngStream(12));
  RngStream rng(13);
  for (int i = 0; i < 1000000; ++i) {
    const auto a = static_cast<Action>(rng.next_bits() % 5);
    env.step(s, a);
    if (s.row < 0 || s.row > 14 || s.col < 0 || s.col > 14) {
      FAIL("left the grid at step " << i);
    }
    if (i % 1000 == 999) s.u = 0.0;  // keep u bounded for the logistic readout
  }
}
