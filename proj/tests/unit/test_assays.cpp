#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "soma/assays/assays.hpp"
#include "soma/assays/criteria.hpp"
#include "soma/assays/stats.hpp"

using namespace soma;

namespace {

EpisodeLog log_with_zones(const std::array<double, kNumZones>& occ) {
  EpisodeLog log;
  log.occupancy = occ;
  return log;
}

Agent make_agent() { return Agent(AgentConfig{}, RngStream(17)); }

// Binomial coefficient for the exact rank-sum oracle.
double choose(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace

TEST_CASE("occupancy") {
  const GridWorld env;
  SUBCASE("pinned in the top-right corner") {
    std::array<double, kNumZones> occ{};
    occ[static_cast<std::size_t>(env.zone_of(0, 14))] = 1.0;
    const std::vector<EpisodeLog> logs(60, log_with_zones(occ));
    const OccupancyResult r = occupancy_assay(logs, 50);
    CHECK(r.top_right == 1.0);
    CHECK(r.bottom == 0.0);
    CHECK(r.episodes_used == 50);
    CHECK_FALSE(r.short_run);
    for (std::size_t z = 0; z < kNumZones; ++z)
      if (z != static_cast<std::size_t>(kTopRight)) CHECK(r.zones[z] == 0.0);
  }
  SUBCASE("uniform random walk") {
    // Wall clamping keeps the walk's transition matrix symmetric, so from a uniform start every
    // cell, and every 5x5 zone, carries 1/9 of the mass.
    RngStream rng(99);
    std::vector<EpisodeLog> logs;
    for (int e = 0; e < 50; ++e) {
      EnvState s = env.initial_state(rng.substream(static_cast<std::uint64_t>(e)));
      s.row = static_cast<int>(rng.next_bits() % 15);
      s.col = static_cast<int>(rng.next_bits() % 15);
      std::array<double, kNumZones> occ{};
      for (int t = 0; t < 400; ++t) {
        env.step(s, static_cast<Action>(rng.next_bits() % kNumActions));
        occ[static_cast<std::size_t>(env.zone_of(s.row, s.col))] += 1.0 / 400.0;
      }
      logs.push_back(log_with_zones(occ));
    }
    const OccupancyResult r = occupancy_assay(logs, 50);
    double total = 0.0;
    for (double z : r.zones) {
      CHECK(z == doctest::Approx(1.0 / 9.0).epsilon(0.3));
      total += z;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.bottom == doctest::Approx(1.0 / 3.0).epsilon(0.15));
  }
  SUBCASE("short history is flagged") {
    const std::vector<EpisodeLog> logs(10, log_with_zones({1, 0, 0, 0, 0, 0, 0, 0, 0}));
    const OccupancyResult r = occupancy_assay(logs, 50);
    CHECK(r.short_run);
    CHECK(r.episodes_used == 10);
  }
}

TEST_CASE("readiness averages the logged conative target") {
  std::vector<EpisodeLog> logs(50);
  for (auto& l : logs) l.mean_q = {0.2, 0.2, 0.2, 0.2, 0.2};
  const ReadinessResult r = readiness_assay(logs, 50);
  for (double q : r.q) CHECK(q == doctest::Approx(0.2).epsilon(1e-14));
}

TEST_CASE("calibration") {
  Agent agent = make_agent();
  const GridWorld env;
  const Tensor g0(Shape{8}, 0.0);
  SUBCASE("oracle decoder gives r = 1") {
    const EtaOverride oracle = [](const GridWorld& e, const EnvState& s, const Tensor&) {
      Tensor eta(Shape{kNumActions});
      for (Action a : kAllActions)
        eta[static_cast<std::size_t>(a)] = e.counterfactual_tendency(s, a, e.config().tendency_horizon);
      return eta;
    };
    const CalibrationResult r = calibration_assay(agent, env, {}, g0, 300, 200, RngStream(5), oracle);
    CHECK(r.predicted.size() == 300);
    CHECK_FALSE(r.degenerate);
    CHECK(r.r == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("constant decoder is degenerate") {
    const EtaOverride flat = [](const GridWorld&, const EnvState&, const Tensor&) { return Tensor(Shape{5}, 0.3); };
    const CalibrationResult r = calibration_assay(agent, env, {}, g0, 100, 200, RngStream(5), flat);
    CHECK(r.degenerate);
    CHECK(r.r == 0.0);
  }
  SUBCASE("repeatable") {
    const CalibrationResult a = calibration_assay(agent, env, {}, g0, 80, 200, RngStream(6));
    const CalibrationResult b = calibration_assay(agent, env, {}, g0, 80, 200, RngStream(6));
    CHECK(a.predicted == b.predicted);
    CHECK(a.r == b.r);
  }
}

TEST_CASE("shock rollouts") {
  Agent agent = make_agent();
  const GridWorld env;
  const AssayConfig cfg;
  const RngStream pair(123);
  const ShockRollout control = shock_rollout(agent, env, {}, pair, Condition::Control, cfg);
  const ShockRollout shock = shock_rollout(agent, env, {}, pair, Condition::Shock, cfg);
  CHECK(control.steps.size() == 160);
  CHECK(pre_shock_identical(control, shock, cfg.shock_start));
  CHECK_FALSE(control.steps[80].u == shock.steps[80].u);
  CHECK(control.shocks.empty());
  REQUIRE(shock.shocks.size() == 20);
  for (const auto& s : shock.shocks) {
    CHECK(s.t >= 60);
    CHECK(s.t <= 79);
    CHECK(s.delta == -0.08);
  }
  CHECK(shock.injected_total() == -0.08 * 20);
  CHECK(shock.injected_total() == doctest::Approx(-1.6).epsilon(1e-15));
  const double du = shock_magnitude(control, shock, cfg);
  CHECK(du < 0.0);
  CHECK(du > -1.6);

  SUBCASE("without body routing g only moves through z") {
    const ShockRollout c2 = shock_rollout(agent, env, {false}, pair, Condition::Control, cfg);
    const ShockRollout s2 = shock_rollout(agent, env, {false}, pair, Condition::Shock, cfg);
    CHECK(pre_shock_identical(c2, s2, cfg.shock_start));
    // Before the first shocked observation reaches z, g is unchanged even though u differs.
    CHECK(c2.steps[59].g == s2.steps[59].g);
  }
}

TEST_CASE("PCA displacement") {
  SUBCASE("origin against a unit offset") {
    std::vector<Tensor> control, shock;
    for (int i = 0; i < 20; ++i) {
      control.push_back(Tensor(Shape{8}, 0.0));
      Tensor s(Shape{8}, 0.0);
      s[0] = 1.0;
      shock.push_back(s);
    }
    const DisplacementResult d = pca_displacement(control, shock, 2);
    CHECK(d.displacement == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_FALSE(d.zero_variance);
  }
  SUBCASE("null perturbation") {
    RngStream rng(4);
    std::vector<Tensor> g;
    for (int i = 0; i < 30; ++i) {
      Tensor t(Shape{8});
      for (auto& v : t.storage()) v = rng.uniform(-1, 1);
      g.push_back(t);
    }
    CHECK(pca_displacement(g, g, 2).displacement == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("identical constant trajectories") {
    const std::vector<Tensor> g(10, Tensor(Shape{8}, 0.25));
    const DisplacementResult d = pca_displacement(g, g, 2);
    CHECK(d.zero_variance);
    CHECK(d.displacement == 0.0);
  }
}

TEST_CASE("same-state probe") {
  Agent agent = make_agent();
  const GridWorld env;
  const ProbeSet probes = make_probe_set(env, RngStream(8), 64);
  CHECK(probes.probes.size() == 64);
  CHECK(probes.hash() == make_probe_set(env, RngStream(8), 64).hash());
  CHECK_FALSE(probes.hash() == make_probe_set(env, RngStream(9), 64).hash());

  RngStream rng(10);
  Tensor a(Shape{8}), b(Shape{8});
  for (auto& v : a.storage()) v = rng.uniform(-1, 1);
  for (auto& v : b.storage()) v = rng.uniform(-1, 1);
  const ProbeResult same = same_state_probe(agent, a, a, probes);
  CHECK(same.state_distance == 0.0);
  CHECK(same.spectrum_distance == 0.0);
  const ProbeResult ab = same_state_probe(agent, a, b, probes), ba = same_state_probe(agent, b, a, probes);
  CHECK(ab.state_distance > 0.0);
  CHECK(ab.state_distance == doctest::Approx(ba.state_distance).epsilon(1e-14));
  CHECK(ab.spectrum_distance == doctest::Approx(ba.spectrum_distance).epsilon(1e-12));

  agent.metric_net.zero_weights();
  for (auto& v : agent.metric_net.bias.value.storage()) v = 0.0;
  CHECK(same_state_probe(agent, a, b, probes).spectrum_distance == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("Spearman correlation") {
  const std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  std::vector<double> up(x.size()), down(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    up[i] = std::exp(x[i]);
    down[i] = -x[i] * x[i];
  }
  CHECK(spearman(x, up).rho == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(spearman(x, down).rho == doctest::Approx(-1.0).epsilon(1e-14));

  SUBCASE("exact p for n = 4, perfect order") {
    const std::vector<double> a{1, 2, 3, 4};
    const CorrelationTest t = spearman(a, a);
    CHECK(t.exact);
    CHECK(t.p == doctest::Approx(2.0 / 24.0).epsilon(1e-12));
  }
  SUBCASE("null calibration") {
    RngStream rng(2024);
    int below = 0;
    const int trials = 10000;
    std::vector<double> a(30), b(30);
    for (int i = 0; i < trials; ++i) {
      for (auto& v : a) v = rng.uniform();
      for (auto& v : b) v = rng.uniform();
      if (std::abs(spearman(a, b).rho) < 0.5) ++below;
    }
    CHECK(below >= 0.99 * trials);
  }
  SUBCASE("permutation p") {
    const double p = spearman_permutation_p(x, up, 2000, RngStream(3));
    CHECK(p == doctest::Approx(1.0 / 2001.0).epsilon(1e-12));
    std::vector<double> noise(x.size());
    RngStream rng(5);
    for (auto& v : noise) v = rng.uniform();
    CHECK(spearman_permutation_p(x, noise, 2000, RngStream(3)) > 0.01);
  }
}

TEST_CASE("Mann-Whitney rank-sum test") {
  SUBCASE("identical groups") {
    const std::vector<double> a{1, 2, 3, 4}, b{1, 2, 3, 4};
    CHECK(mannwhitney(a, b).p == doctest::Approx(1.0));
    const std::vector<double> c(5, 2.0), d(6, 2.0);
    CHECK(mannwhitney(c, d).p == 1.0);
  }
  SUBCASE("complete separation, n = m = 3") {
    const std::vector<double> a{1, 2, 3}, b{4, 5, 6};
    const RankSumTest t = mannwhitney(a, b);
    CHECK(t.u == 0.0);
    CHECK(t.exact);
    CHECK(t.p == doctest::Approx(2.0 / choose(6, 3)).epsilon(1e-12));
    CHECK(t.p == doctest::Approx(0.1).epsilon(1e-12));
  }
  SUBCASE("complete separation, n = m = 10") {
    std::vector<double> a(10), b(10);
    std::iota(a.begin(), a.end(), 0.0);
    std::iota(b.begin(), b.end(), 20.0);
    const RankSumTest low = mannwhitney(a, b), high = mannwhitney(b, a);
    CHECK(low.u == 0.0);
    CHECK(high.u == 100.0);
    CHECK(low.p == doctest::Approx(2.0 / choose(20, 10)).epsilon(1e-10));
    CHECK(low.p < 0.001);
    CHECK(high.p == doctest::Approx(low.p).epsilon(1e-12));
  }
  SUBCASE("ties fall back to the normal approximation") {
    const std::vector<double> a{1, 1, 2, 3, 3}, b{3, 4, 4, 5, 6};
    const RankSumTest t = mannwhitney(a, b);
    CHECK_FALSE(t.exact);
    CHECK(t.p > 0.0);
    CHECK(t.p < 0.1);
  }
}

TEST_CASE("quantiles") {
  const std::vector<double> v{4, 1, 3, 2};
  CHECK(median(v) == 2.5);
  CHECK(quantile(v, 0.25) == doctest::Approx(1.75));
  CHECK(quantile(v, 0.0) == 1.0);
  CHECK(quantile(v, 1.0) == 4.0);
  const Spread s = spread(v);
  CHECK(s.q75 == doctest::Approx(3.25));
  CHECK(mid_ranks(std::vector<double>{10, 20, 20, 5}) == std::vector<double>{2, 3.5, 3.5, 1});
  CHECK_FALSE(pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}).has_value());
}

TEST_CASE("criteria verdicts need full cohorts") {
  std::vector<AssayRow> rows;
  for (int seed = 0; seed < 2; ++seed) {
    AssayRow r;
    r.cohort = "full";
    r.seed = seed;
    r.shock_injected = -0.08 * 20;
    r.pre_shock_identical = true;
    r.shock_magnitude = -1.25;
    rows.push_back(r);
  }
  const FindingStats stats = compute_finding_stats(rows, {"full", "no_conation", "no_body_to_g"}, 100, RngStream(1),
                                                   -0.08 * 20);
  const auto results = evaluate_findings(stats);
  REQUIRE_FALSE(results.empty());
  CHECK(results.front().id == 4);
  CHECK(results.front().verdict == Verdict::Pass);
  for (std::size_t i = 1; i < results.size(); ++i) CHECK(results[i].verdict == Verdict::Skipped);
}
