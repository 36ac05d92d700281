#include "soma/numcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "soma/harness/rng.hpp"
#include "soma/numcore/layers.hpp"
#include "soma/numcore/linalg.hpp"

namespace soma {

double gradient_error(const std::vector<Parameter*>& params, const std::function<Var(Tape&)>& loss, double h,
                      double floor) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var l = loss(tape);
    tape.backward(l);
  }
  auto eval = [&] {
    Tape tape;
    tape.set_grad_enabled(false);
    return loss(tape).item();
  };
  double worst = 0.0;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double up = eval();
      p->value[i] = orig - h;
      const double down = eval();
      p->value[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  for (Parameter* p : params) p->zero_grad();
  return worst;
}

namespace {

Tensor random_tensor(RngStream& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

std::size_t dim(RngStream& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.next_bits() % (hi - lo + 1));
}

Tensor probability(RngStream& rng, std::size_t n) {
  Tensor t = random_tensor(rng, Shape{n}, 0.1, 1.0);
  double s = 0.0;
  for (double v : t.storage()) s += v;
  for (auto& v : t.storage()) v /= s;
  return t;
}

struct Instance {
  std::vector<Tensor> inputs;
  std::function<Var(Tape&, const std::vector<Var>&)> fn;
  std::shared_ptr<GruCell> cell;
};

using Builder = std::function<Instance(RngStream&)>;

Builder unary(std::function<Var(Var)> op, bool matrix = false, double lo = -1.0, double hi = 1.0) {
  return [=](RngStream& rng) {
    const Shape s = matrix ? Shape{dim(rng, 1, 4), dim(rng, 1, 4)} : Shape{dim(rng, 1, 6)};
    return Instance{{random_tensor(rng, s, lo, hi)}, [=](Tape&, const std::vector<Var>& v) { return op(v[0]); }, {}};
  };
}

Builder binary_same(std::function<Var(Var, Var)> op) {
  return [=](RngStream& rng) {
    const Shape s = rng.uniform() < 0.5 ? Shape{dim(rng, 1, 6)} : Shape{dim(rng, 1, 3), dim(rng, 1, 3)};
    return Instance{{random_tensor(rng, s), random_tensor(rng, s)},
                    [=](Tape&, const std::vector<Var>& v) { return op(v[0], v[1]); },
                    {}};
  };
}

std::vector<std::pair<std::string, Builder>> registry() {
  std::vector<std::pair<std::string, Builder>> r;
  r.emplace_back("add", binary_same(add));
  r.emplace_back("sub", binary_same(sub));
  r.emplace_back("mul", binary_same(mul));
  r.emplace_back("scale", unary([](Var a) { return scale(a, -1.7); }));
  r.emplace_back("dot", [](RngStream& rng) {
    const Shape s{dim(rng, 1, 6)};
    return Instance{{random_tensor(rng, s), random_tensor(rng, s)},
                    [](Tape&, const std::vector<Var>& v) { return dot(v[0], v[1]); },
                    {}};
  });
  r.emplace_back("matmul", [](RngStream& rng) {
    const std::size_t n = dim(rng, 1, 4), k = dim(rng, 1, 4), m = dim(rng, 1, 4);
    return Instance{{random_tensor(rng, Shape{n, k}), random_tensor(rng, Shape{k, m})},
                    [](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); },
                    {}};
  });
  r.emplace_back("matvec", [](RngStream& rng) {
    const std::size_t n = dim(rng, 1, 4), k = dim(rng, 1, 5);
    return Instance{{random_tensor(rng, Shape{n, k}), random_tensor(rng, Shape{k})},
                    [](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); },
                    {}};
  });
  r.emplace_back("affine", [](RngStream& rng) {
    const std::size_t n = dim(rng, 1, 4), k = dim(rng, 1, 5);
    return Instance{{random_tensor(rng, Shape{n, k}), random_tensor(rng, Shape{k}), random_tensor(rng, Shape{n})},
                    [](Tape&, const std::vector<Var>& v) { return affine(v[0], v[1], v[2]); },
                    {}};
  });
  r.emplace_back("transpose", unary(transpose, true));
  r.emplace_back("outer", [](RngStream& rng) {
    return Instance{{random_tensor(rng, Shape{dim(rng, 1, 4)}), random_tensor(rng, Shape{dim(rng, 1, 4)})},
                    [](Tape&, const std::vector<Var>& v) { return outer(v[0], v[1]); },
                    {}};
  });
  r.emplace_back("flatten", unary(flatten, true));
  r.emplace_back("tanh", unary([](Var a) { return tanh(a); }, false, -2.0, 2.0));
  r.emplace_back("logistic", unary(logistic, false, -3.0, 3.0));
  r.emplace_back("exp", unary([](Var a) { return exp(a); }));
  r.emplace_back("log_floor", unary([](Var a) { return log_floor(a); }, false, 0.05, 2.0));
  r.emplace_back("square", unary(square));
  r.emplace_back("sum", unary(sum, true));
  r.emplace_back("mean", unary([](Var a) { return mean(a); }, true));
  r.emplace_back("softmax", unary([](Var a) { return softmax(a, 1.0); }, false, -2.0, 2.0));
  r.emplace_back("softmax_T", unary([](Var a) { return softmax(a, 0.3); }, false, -1.0, 1.0));
  r.emplace_back("log_softmax", unary(log_softmax, false, -2.0, 2.0));
  r.emplace_back("concat", [](RngStream& rng) {
    return Instance{{random_tensor(rng, Shape{dim(rng, 1, 4)}), random_tensor(rng, Shape{dim(rng, 1, 4)}),
                     random_tensor(rng, Shape{dim(rng, 1, 3)})},
                    [](Tape&, const std::vector<Var>& v) { return concat({v[0], v[1], v[2]}); },
                    {}};
  });
  r.emplace_back("slice", [](RngStream& rng) {
    const std::size_t n = dim(rng, 2, 7), b = dim(rng, 0, n - 1), len = dim(rng, 1, n - b);
    return Instance{{random_tensor(rng, Shape{n})},
                    [=](Tape&, const std::vector<Var>& v) { return slice(v[0], b, len); },
                    {}};
  });
  r.emplace_back("pick", [](RngStream& rng) {
    const std::size_t n = dim(rng, 1, 6), i = dim(rng, 0, n - 1);
    return Instance{{random_tensor(rng, Shape{n})}, [=](Tape&, const std::vector<Var>& v) { return pick(v[0], i); }, {}};
  });
  r.emplace_back("lower_triangular", [](RngStream& rng) {
    const std::size_t n = dim(rng, 1, 4);
    return Instance{{random_tensor(rng, Shape{n * (n + 1) / 2})},
                    [=](Tape&, const std::vector<Var>& v) { return lower_triangular(v[0], n); },
                    {}};
  });
  r.emplace_back("add_diagonal", [](RngStream& rng) {
    const std::size_t n = dim(rng, 1, 4);
    return Instance{{random_tensor(rng, Shape{n, n})},
                    [](Tape&, const std::vector<Var>& v) { return add_diagonal(v[0], 1e-3); },
                    {}};
  });
  r.emplace_back("kl_divergence", [](RngStream& rng) {
    const std::size_t n = dim(rng, 2, 6);
    const Tensor q = probability(rng, n);
    return Instance{{random_tensor(rng, Shape{n}, -2.0, 2.0)},
                    [=](Tape& t, const std::vector<Var>& v) { return kl_divergence(t.constant(q), softmax(v[0])); },
                    {}};
  });
  r.emplace_back("mse", binary_same(mse));
  r.emplace_back("metric", [](RngStream& rng) {
    const std::size_t n = dim(rng, 1, 4);
    return Instance{{random_tensor(rng, Shape{n * (n + 1) / 2}), random_tensor(rng, Shape{n})},
                    [=](Tape&, const std::vector<Var>& v) {
                      Var l = lower_triangular(v[0], n);
                      Var m = add_diagonal(matmul(l, transpose(l)), 1e-3);
                      return flatten(outer(v[1], matmul(m, v[1])));
                    },
                    {}};
  });
  r.emplace_back("gru_step", [](RngStream& rng) {
    const std::size_t in = dim(rng, 1, 4), hid = dim(rng, 1, 4);
    auto cell = std::make_shared<GruCell>("check", in, hid, rng);
    return Instance{{random_tensor(rng, Shape{in}), random_tensor(rng, Shape{hid}, -0.9, 0.9)},
                    [cell](Tape& t, const std::vector<Var>& v) { return gru_step(t, *cell, v[0], v[1]); },
                    cell};
  });
  return r;
}

}  // namespace

std::vector<GradCheckResult> gradient_check_suite(int instances, std::uint64_t seed) {
  std::vector<GradCheckResult> results;
  const RngStream root = RngStream(seed).substream("gradcheck");
  for (const auto& [name, build] : registry()) {
    GradCheckResult res{name, instances, 0.0};
    RngStream rng = root.substream(name);
    for (int i = 0; i < instances; ++i) {
      Instance inst = build(rng);
      std::vector<Parameter> params;
      for (std::size_t k = 0; k < inst.inputs.size(); ++k) params.emplace_back("in" + std::to_string(k), inst.inputs[k]);
      std::vector<Parameter*> ptrs;
      for (auto& p : params) ptrs.push_back(&p);
      if (inst.cell)
        for (Parameter* p : inst.cell->parameters()) ptrs.push_back(p);
      // Output entries are mixed through fixed weights so each one is exercised.
      const RngStream wkey = rng.substream(static_cast<std::uint64_t>(i));
      auto loss = [&](Tape& t) {
        std::vector<Var> vars;
        for (auto& p : params) vars.push_back(t.param(p));
        Var out = inst.fn(t, vars);
        if (out.value().rank() == 0) return out;
        Tensor w(Shape{out.size()});
        for (std::size_t j = 0; j < w.size(); ++j) w[j] = wkey.uniform_at(j) * 2.0 - 1.0;
        return sum(mul(flatten(out), t.constant(w)));
      };
      res.max_error = std::max(res.max_error, gradient_error(ptrs, loss));
    }
    results.push_back(res);
  }
  return results;
}

std::vector<InvariantResult> numeric_invariant_suite(int instances, std::uint64_t seed) {
  const RngStream root = RngStream(seed).substream("invariants");
  InvariantResult sm_sum{"softmax sums to one", instances, 0.0, 1e-9};
  InvariantResult sm_shift{"softmax shift invariance", instances, 0.0, 1e-12};
  InvariantResult kl_self{"KL(q, q) vanishes", instances, 0.0, 1e-9};
  InvariantResult eig_floor{"metric eigenvalues >= eps", instances, 0.0, 1e-12};
  InvariantResult pca_orth{"PCA components orthonormal", instances, 0.0, 1e-8};
  InvariantResult repeat{"repeat-run determinism", instances, 0.0, 0.0};
  RngStream rng = root;
  for (int i = 0; i < instances; ++i) {
    Tape tape;
    tape.set_grad_enabled(false);
    const std::size_t n = dim(rng, 2, 9);
    const Tensor v = random_tensor(rng, Shape{n}, -5.0, 5.0);
    const double c = rng.uniform(-10.0, 10.0);
    Tensor shifted = v;
    for (auto& x : shifted.storage()) x += c;
    const Tensor p = softmax(tape.constant(v)).value();
    const Tensor ps = softmax(tape.constant(shifted)).value();
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      total += p[k];
      sm_shift.worst = std::max(sm_shift.worst, std::abs(p[k] - ps[k]));
    }
    sm_sum.worst = std::max(sm_sum.worst, std::abs(total - 1.0));

    const Tensor q = probability(rng, n);
    kl_self.worst = std::max(kl_self.worst, std::abs(kl_divergence(tape.constant(q), tape.constant(q)).item()));

    const std::size_t d = dim(rng, 2, 8);
    const double eps = 1e-3;
    Var l = lower_triangular(tape.constant(random_tensor(rng, Shape{d * (d + 1) / 2}, -2.0, 2.0)), d);
    const Tensor m = add_diagonal(matmul(l, transpose(l)), eps).value();
    const auto ev = symmetric_eigenvalues(m);
    eig_floor.worst = std::max(eig_floor.worst, std::max(0.0, eps - ev.front()));

    const std::size_t rows = dim(rng, 4, 40), cols = dim(rng, 2, 8), k = std::min<std::size_t>(2, cols);
    const PcaResult pca = pca_fit_project(random_tensor(rng, Shape{rows, cols}), k);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) {
        double dotp = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dotp += pca.components.at(a, j) * pca.components.at(b, j);
        pca_orth.worst = std::max(pca_orth.worst, std::abs(dotp - (a == b ? 1.0 : 0.0)));
      }

    // Two independent evaluations of the same forward/backward pass.
    const RngStream cell_key = rng.substream(static_cast<std::uint64_t>(i));
    std::vector<double> first;
    for (int rep = 0; rep < 2; ++rep) {
      RngStream init = cell_key;
      GruCell cell("gru", 3, 4, init);
      Tape t2;
      Var h = gru_step(t2, cell, t2.constant(Tensor::vector({0.1, -0.2, 0.3})), t2.constant(Tensor(Shape{4}, 0.05)));
      t2.backward(sum(square(h)));
      std::vector<double> out(h.value().storage().begin(), h.value().storage().end());
      for (Parameter* prm : cell.parameters()) out.insert(out.end(), prm->grad.storage().begin(), prm->grad.storage().end());
      if (rep == 0) {
        first = out;
      } else {
        double diff = first.size() == out.size() ? 0.0 : 1.0;
        for (std::size_t j = 0; j < std::min(first.size(), out.size()); ++j)
          if (first[j] != out[j]) diff = 1.0;
        repeat.worst = std::max(repeat.worst, diff);
      }
    }
  }
  return {sm_sum, sm_shift, kl_self, eig_floor, pca_orth, repeat};
}

}  // namespace soma
