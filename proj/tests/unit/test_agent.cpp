#include "doctest.h"

#include <cmath>
#include <numeric>

#include "soma/agent/agent.hpp"
#include "soma/harness/rng.hpp"
#include "soma/numcore/linalg.hpp"

using namespace soma;

namespace {

Agent make_agent(std::uint64_t seed = 5) { return Agent(AgentConfig{}, RngStream(seed)); }

Tensor random_vector(RngStream& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  Tensor t(Shape{n});
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

// Plain loops, no tape.
std::vector<double> affine_ref(const Affine& a, const std::vector<double>& x) {
  std::vector<double> y(a.out_dim());
  for (std::size_t i = 0; i < y.size(); ++i) {
    double s = a.bias.value[i];
    for (std::size_t j = 0; j < x.size(); ++j) s += a.weight.value.at(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

std::vector<double> cat(std::initializer_list<std::vector<double>> parts) {
  std::vector<double> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::vector<double> tanh_all(std::vector<double> v) {
  for (auto& x : v) x = std::tanh(x);
  return v;
}

std::vector<double> as_vec(const Tensor& t) { return t.storage(); }

}  // namespace

TEST_CASE("encoder") {
  Agent agent = make_agent();
  Tape tape;
  SUBCASE("zero weights give tanh(bias)") {
    agent.encoder_obs.zero_weights();
    agent.encoder_body.zero_weights();
    agent.encoder_obs.bias.value[3] = 0.4;
    Var z = agent.encode(tape, tape.constant(Tensor(Shape{8}, 2.0)), tape.constant(Tensor(Shape{5}, -1.0)));
    CHECK(z.size() == 24);
    CHECK(z.value()[3] == doctest::Approx(std::tanh(0.4)));
    CHECK(z.value()[0] == 0.0);
  }
  SUBCASE("lanes are separate") {
    RngStream rng(3);
    const Tensor b = random_vector(rng, 5);
    Var z1 = agent.encode(tape, tape.constant(random_vector(rng, 8)), tape.constant(b));
    Var z2 = agent.encode(tape, tape.constant(random_vector(rng, 8)), tape.constant(b));
    for (std::size_t i = 16; i < 24; ++i) CHECK(z1.value()[i] == z2.value()[i]);
    CHECK(z1.value()[0] != z2.value()[0]);
  }
  SUBCASE("direct evaluation") {
    RngStream rng(4);
    const Tensor x = random_vector(rng, 8), b = random_vector(rng, 5);
    Var z = agent.encode(tape, tape.constant(x), tape.constant(b));
    const auto ref = cat({tanh_all(affine_ref(agent.encoder_obs, as_vec(x))),
                          tanh_all(affine_ref(agent.encoder_body, as_vec(b)))});
    for (std::size_t i = 0; i < 24; ++i) CHECK(z.value()[i] == doctest::Approx(ref[i]).epsilon(1e-13));
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(agent.encode(tape, tape.constant(Tensor(Shape{7})), tape.constant(Tensor(Shape{5}))),
                    DimensionError);
  }
}

TEST_CASE("metric geometry") {
  Agent agent = make_agent();
  const double eps = agent.config().metric_epsilon;
  SUBCASE("zero net gives eps I") {
    agent.metric_net.zero_weights();
    for (auto& v : agent.metric_net.bias.value.storage()) v = 0.0;
    const MetricGeometry m = agent.metric_from_g(Tensor(Shape{8}, 0.3));
    for (double e : symmetric_eigenvalues(m.M)) CHECK(e == doctest::Approx(eps).epsilon(1e-12));
  }
  RngStream rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const MetricGeometry m = agent.metric_from_g(random_vector(rng, 8, -2.0, 2.0));
    const std::size_t n = m.M.rows();
    CHECK(n == 24);
    double worst_sym = 0.0, worst_recon = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (j > i) CHECK(m.L.at(i, j) == 0.0);
        double s = i == j ? eps : 0.0;
        for (std::size_t k = 0; k < n; ++k) s += m.L.at(i, k) * m.L.at(j, k);
        worst_sym = std::max(worst_sym, std::abs(m.M.at(i, j) - m.M.at(j, i)));
        worst_recon = std::max(worst_recon, std::abs(m.M.at(i, j) - s));
      }
    CHECK(worst_sym <= 1e-12);
    CHECK(worst_recon <= 1e-12);
    const auto ev = symmetric_eigenvalues(m.M);
    CHECK(*std::min_element(ev.begin(), ev.end()) >= eps - 1e-10);
  }
}

TEST_CASE("quadratic features") {
  Tape tape;
  const std::size_t n = 4;
  SUBCASE("basis vector with identity") {
    Tensor z(Shape{n}, 0.0);
    z[0] = 1.0;
    Var phi = quadratic_features(tape.constant(z), tape.constant(Tensor::identity(n)));
    CHECK(phi.size() == n * n);
    CHECK(phi.value()[0] == 1.0);
    CHECK(std::accumulate(phi.value().storage().begin(), phi.value().storage().end(), 0.0) == 1.0);
  }
  RngStream rng(12);
  Tensor m(Shape{n, n});
  for (auto& v : m.storage()) v = rng.uniform(-1, 1);
  const Tensor z = random_vector(rng, n);
  const Tensor phi = quadratic_features(tape.constant(z), tape.constant(m)).value();
  SUBCASE("brute-force loop") {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double mz = 0.0;
        for (std::size_t k = 0; k < n; ++k) mz += m.at(j, k) * z[k];
        CHECK(phi[i * n + j] == doctest::Approx(z[i] * mz).epsilon(1e-14));
      }
  }
  SUBCASE("even in z, quadratic scaling, linear in M") {
    Tensor neg = z, twice = z, m2 = m;
    for (auto& v : neg.storage()) v = -v;
    for (auto& v : twice.storage()) v *= 2.0;
    for (auto& v : m2.storage()) v *= 3.0;
    const Tensor pn = quadratic_features(tape.constant(neg), tape.constant(m)).value();
    const Tensor p2 = quadratic_features(tape.constant(twice), tape.constant(m)).value();
    const Tensor pm = quadratic_features(tape.constant(z), tape.constant(m2)).value();
    for (std::size_t i = 0; i < n * n; ++i) {
      CHECK(pn[i] == doctest::Approx(phi[i]).epsilon(1e-14));
      CHECK(p2[i] == doctest::Approx(4.0 * phi[i]).epsilon(1e-14));
      CHECK(pm[i] == doctest::Approx(3.0 * phi[i]).epsilon(1e-14));
    }
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(quadratic_features(tape.constant(z), tape.constant(Tensor::identity(3))), DimensionError);
  }
}

TEST_CASE("policy state and policy head") {
  Agent agent = make_agent();
  Tape tape;
  RngStream rng(21);
  const Tensor z = random_vector(rng, 24), phi = random_vector(rng, 576), p = one_hot(2, 5), g = random_vector(rng, 8);
  SUBCASE("zero weights") {
    agent.state_head.zero_weights();
    agent.policy_head.zero_weights();
    for (auto& v : agent.policy_head.bias.value.storage()) v = 0.0;
    Var s = agent.policy_state(tape, tape.constant(z), tape.constant(phi), tape.constant(p), tape.constant(g));
    for (std::size_t i = 0; i < 32; ++i) CHECK(s.value()[i] == doctest::Approx(std::tanh(agent.state_head.bias.value[i])));
    Var pi = softmax(agent.policy(tape, s, tape.constant(0.7)));
    for (double v : pi.value().storage()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
  }
  SUBCASE("direct evaluation") {
    Var s = agent.policy_state(tape, tape.constant(z), tape.constant(phi), tape.constant(p), tape.constant(g));
    const auto s_ref = tanh_all(affine_ref(agent.state_head, cat({as_vec(z), as_vec(phi), as_vec(p), as_vec(g)})));
    for (std::size_t i = 0; i < 32; ++i) CHECK(s.value()[i] == doctest::Approx(s_ref[i]).epsilon(1e-12));
    const auto logits = affine_ref(agent.policy_head, cat({s_ref, {0.3}}));
    double norm = 0.0;
    for (double l : logits) norm += std::exp(l);
    Var pi = softmax(agent.policy(tape, s, tape.constant(0.3)));
    CHECK(std::accumulate(pi.value().storage().begin(), pi.value().storage().end(), 0.0) ==
          doctest::Approx(1.0).epsilon(1e-9));
    for (std::size_t a = 0; a < 5; ++a) CHECK(pi.value()[a] == doctest::Approx(std::exp(logits[a]) / norm).epsilon(1e-12));
  }
  SUBCASE("g reaches s directly and through phi") {
    const Tensor base = agent.policy_state(tape, tape.constant(z), tape.constant(phi), tape.constant(p), tape.constant(g)).value();
    Tensor g2 = g, phi2 = phi;
    g2[0] += 0.5;
    phi2[7] += 0.5;
    const Tensor direct = agent.policy_state(tape, tape.constant(z), tape.constant(phi), tape.constant(p), tape.constant(g2)).value();
    const Tensor metric = agent.policy_state(tape, tape.constant(z), tape.constant(phi2), tape.constant(p), tape.constant(g)).value();
    CHECK_FALSE(direct == base);
    CHECK_FALSE(metric == base);
  }
}

TEST_CASE("decoders") {
  Agent agent = make_agent();
  Tape tape;
  RngStream rng(31);
  const Tensor z = random_vector(rng, 24), g = random_vector(rng, 8);
  SUBCASE("zero weights") {
    agent.obs_decoder.zero_weights();
    agent.body_decoder.zero_weights();
    for (auto& v : agent.body_decoder.bias.value.storage()) v = 0.0;
    Var x = agent.predict_observation(tape, tape.constant(z), tape.constant(one_hot(1, 5)), tape.constant(g));
    CHECK(x.value() == agent.obs_decoder.bias.value);
    auto [eta, b] = agent.body_decode(tape, tape.constant(z), tape.constant(g), tape.constant(0.4));
    for (std::size_t a = 0; a < 5; ++a) {
      CHECK(eta.value()[a] == 0.0);
      CHECK(b.value()[a] == 0.5);
    }
  }
  SUBCASE("action conditioning") {
    Var x0 = agent.predict_observation(tape, tape.constant(z), tape.constant(one_hot(0, 5)), tape.constant(g));
    Var x1 = agent.predict_observation(tape, tape.constant(z), tape.constant(one_hot(1, 5)), tape.constant(g));
    CHECK_FALSE(x0.value() == x1.value());
    CHECK_THROWS_AS(agent.predict_observation(tape, tape.constant(z), tape.constant(Tensor(Shape{4})), tape.constant(g)),
                    DimensionError);
  }
  SUBCASE("direct evaluation") {
    Var x = agent.predict_observation(tape, tape.constant(z), tape.constant(one_hot(3, 5)), tape.constant(g));
    const auto x_ref = affine_ref(agent.obs_decoder, cat({as_vec(z), as_vec(one_hot(3, 5)), as_vec(g)}));
    for (std::size_t i = 0; i < 8; ++i) CHECK(x.value()[i] == doctest::Approx(x_ref[i]).epsilon(1e-12));
    auto [eta, b] = agent.body_decode(tape, tape.constant(z), tape.constant(g), tape.constant(0.4));
    const auto h = affine_ref(agent.body_decoder, cat({as_vec(z), as_vec(g), {0.4}}));
    for (std::size_t a = 0; a < 5; ++a) {
      CHECK(eta.value()[a] == doctest::Approx(h[a]).epsilon(1e-12));
      CHECK(b.value()[a] == doctest::Approx(1.0 / (1.0 + std::exp(-h[5 + a]))).epsilon(1e-12));
    }
  }
  SUBCASE("permuting output rows permutes actions") {
    auto [eta, b] = agent.body_decode(tape, tape.constant(z), tape.constant(g), tape.constant(0.4));
    Agent swapped = agent;
    auto& w = swapped.body_decoder.weight.value;
    auto& bias = swapped.body_decoder.bias.value;
    for (std::size_t c = 0; c < w.cols(); ++c) {
      std::swap(w.at(0, c), w.at(4, c));
      std::swap(w.at(5, c), w.at(9, c));
    }
    std::swap(bias[0], bias[4]);
    std::swap(bias[5], bias[9]);
    Tape t2;
    auto [eta2, b2] = swapped.body_decode(t2, t2.constant(z), t2.constant(g), t2.constant(0.4));
    CHECK(eta2.value()[0] == eta.value()[4]);
    CHECK(eta2.value()[4] == eta.value()[0]);
    CHECK(b2.value()[4] == b.value()[0]);
    CHECK(eta2.value()[2] == eta.value()[2]);
  }
}

TEST_CASE("conative distribution") {
  ConativeConfig cfg;
  SUBCASE("action-uniform heads give uniform q") {
    const Tensor q = conative_distribution(Tensor(Shape{5}, 0.3), Tensor(Shape{5}, 0.6), cfg);
    for (double v : q.storage()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
  }
  SUBCASE("single favoured action") {
    cfg = ConativeConfig{1.0, 0.0, 0.2};
    const Tensor q = conative_distribution(Tensor::vector({1, 0, 0, 0, 0}), Tensor(Shape{5}, 0.5), cfg);
    const double e5 = std::exp(5.0);
    CHECK(q[0] == doctest::Approx(e5 / (e5 + 4.0)).epsilon(1e-14));
    CHECK(q[0] == doctest::Approx(0.9737).epsilon(1e-4));
  }
  SUBCASE("shift invariance") {
    RngStream rng(2);
    const Tensor eta = random_vector(rng, 5), b = random_vector(rng, 5, 0, 1);
    Tensor shifted = eta;
    for (auto& v : shifted.storage()) v += 3.7;
    const Tensor q1 = conative_distribution(eta, b, cfg), q2 = conative_distribution(shifted, b, cfg);
    for (std::size_t a = 0; a < 5; ++a) CHECK(q1[a] == doctest::Approx(q2[a]).epsilon(1e-12));
  }
  SUBCASE("raising eta(UP) never lowers q(UP)") {
    RngStream rng(9);
    for (int i = 0; i < 200; ++i) {
      Tensor eta = random_vector(rng, 5), b = random_vector(rng, 5, 0, 1);
      const double before = conative_distribution(eta, b, cfg)[0];
      eta[0] += rng.uniform(0.0, 1.0);
      CHECK(conative_distribution(eta, b, cfg)[0] >= before);
    }
  }
  SUBCASE("non-positive temperature") {
    cfg.temperature = 0.0;
    CHECK_THROWS_AS(conative_distribution(Tensor(Shape{5}), Tensor(Shape{5}), cfg), ParameterError);
  }
}

TEST_CASE("conative loss routing") {
  Agent agent = make_agent();
  Tape tape;
  SUBCASE("analytic values") {
    const Tensor uniform(Shape{5}, 0.2);
    CHECK(conative_loss(tape, uniform, tape.constant(uniform)).item() == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(conative_loss(tape, one_hot(0, 5), tape.constant(uniform)).item() == doctest::Approx(std::log(5.0)).epsilon(1e-14));
  }
  SUBCASE("gradient reaches the policy head only") {
    EnvState st = GridWorld().initial_state(RngStream(1));
    const Observation obs = GridWorld().observe(st);
    agent.zero_grad();
    ForwardVars f = agent.forward(tape, obs, 1, Tensor(Shape{8}, 0.1), 0.05, 0.01, RoutingSwitch{});
    Tensor q = f.q;
    q[0] += 0.3;
    for (auto& v : q.storage()) v /= 1.3;
    tape.backward(conative_loss(tape, q, f.pi_conative));
    for (auto& [group, params] : agent.parameter_groups()) {
      bool any = false;
      for (Parameter* p : params) any = any || !p->grad_is_zero();
      CHECK_MESSAGE(any == (group == "policy_head"), group);
    }
    CHECK_NOTHROW(firewall_check("conative", agent.body_decoder.parameters()));
    CHECK_NOTHROW(firewall_check("conative", agent.perspective.parameters()));
  }
}

TEST_CASE("parameter budget and initialisation") {
  Agent agent = make_agent();
  CHECK(agent.parameter_count() < kParameterBudget);
  for (Parameter* p : agent.parameters())
    for (double v : p->value.storage()) CHECK(std::isfinite(v));
  const double bound = 1.0 / std::sqrt(static_cast<double>(agent.state_head.in_dim()));
  for (double v : agent.state_head.weight.value.storage()) CHECK(std::abs(v) <= bound);
}

TEST_CASE("sample_action inverse cdf") {
  const Tensor pi = Tensor::vector({0.1, 0.2, 0.3, 0.4, 0.0});
  CHECK(sample_action(pi, 0.0) == 0);
  CHECK(sample_action(pi, 0.05) == 0);
  CHECK(sample_action(pi, 0.15) == 1);
  CHECK(sample_action(pi, 0.55) == 2);
  CHECK(sample_action(pi, 0.999) == 3);
}

TEST_CASE("perspective update") {
  RngStream rng(40);
  Perspective persp(PerspectiveConfig{}, 24, rng);
  Tape tape;
  const Tensor g = random_vector(rng, 8, -0.5, 0.5), z = random_vector(rng, 24);
  auto step = [&](double obs_e, double body_e, RoutingSwitch r) {
    return persp.update_g(tape, tape.constant(g), tape.constant(z), obs_e, body_e, r).value();
  };
  SUBCASE("alpha pinned at zero keeps g") {
    persp.alpha_override = 0.0;
    CHECK(step(0.3, 0.2, {}) == g);
  }
  SUBCASE("alpha pinned at one gives the candidate") {
    persp.alpha_override = 1.0;
    const Tensor out = step(0.3, 0.2, {});
    const Tensor errors = Tensor::vector({std::log1p(10.0 * 0.3), std::log1p(1e5 * 0.2)});
    Tensor in(Shape{26});
    for (std::size_t i = 0; i < 24; ++i) in[i] = z[i];
    in[24] = errors[0];
    in[25] = errors[1];
    const Tensor cand = gru_step(tape, persp.gru, tape.constant(in), tape.constant(g)).value();
    CHECK(out == cand);
  }
  SUBCASE("routing off ignores body error") {
    CHECK(step(0.3, 0.0, {false}) == step(0.3, 5.0, {false}));
    CHECK_FALSE(step(0.3, 0.0, {true}) == step(0.3, 5.0, {true}));
  }
  SUBCASE("alpha in (0,1) and g bounded") {
    RngStream r2(41);
    Tensor h(Shape{8}, 0.0);
    for (int i = 0; i < 300; ++i) {
      h = persp.update_g(tape, tape.constant(h), tape.constant(random_vector(r2, 24, -1, 1)), r2.uniform(0, 2),
                         r2.uniform(0, 2), {})
              .value();
      CHECK(persp.last_alpha() > 0.0);
      CHECK(persp.last_alpha() < 1.0);
      for (double v : h.storage()) CHECK(std::abs(v) <= 1.0);
    }
  }
  SUBCASE("initial rate") {
    step(0.0, 0.0, {});
    CHECK(persp.last_alpha() == doctest::Approx(1.0 / (1.0 + std::exp(6.0))).epsilon(1e-12));
  }
  SUBCASE("negative error rejected") { CHECK_THROWS_AS(step(-0.1, 0.0, {}), ContractError); }
}

TEST_CASE("perspective decay and reset") {
  CHECK(decay_across_episode(Tensor(Shape{8}, 0.0)) == Tensor(Shape{8}, 0.0));
  const Tensor d = decay_across_episode(Tensor(Shape{8}, 1.0));
  for (double v : d.storage()) CHECK(v == 0.99);
  Tensor g(Shape{3}, 1.0);
  for (int i = 0; i < 180; ++i) g = decay_across_episode(g);
  CHECK(g[0] == doctest::Approx(std::pow(0.99, 180)).epsilon(1e-12));
  CHECK(g[0] == doctest::Approx(0.1638).epsilon(1e-3));
  CHECK(reset_for_rollout(8) == Tensor(Shape{8}, 0.0));
}

TEST_CASE("firewall check") {
  Parameter a("a", Tensor(Shape{2}, 1.0)), b("b", Tensor(Shape{2}, 1.0));
  CHECK_NOTHROW(firewall_check("actor", {&a, &b}));
  b.grad[1] = 1e-30;
  CHECK_THROWS_AS(firewall_check("actor", {&a, &b}), FirewallViolation);
}
