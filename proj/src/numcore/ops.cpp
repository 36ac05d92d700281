#include "soma/numcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace soma {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

void require_vector(const Var& a, const char* op) {
  if (a.value().rank() != 1) throw DimensionError(std::string(op) + ": expected a vector, got " + shape_string(a.shape()));
}

Tape& common_tape(const Var& a, const Var& b) {
  Tape& t = a.tape();
  if (&b.tape() != &t) throw ContractError("operands recorded on different tapes");
  return t;
}

double stable_logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tape& t = common_tape(a, b);
  Tensor out = a.value();
  const auto& bv = b.value().storage();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    for (int p : {ia, ib}) {
      if (!tp.requires_grad(p)) continue;
      auto& gp = tp.grad(p);
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tape& t = common_tape(a, b);
  Tensor out = a.value();
  const auto& bv = b.value().storage();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    if (tp.requires_grad(ia)) {
      auto& ga = tp.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(ib)) {
      auto& gb = tp.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tape& t = common_tape(a, b);
  Tensor out = a.value();
  const auto& bv = b.value().storage();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& av = tp.value(ia).storage();
    const auto& bv = tp.value(ib).storage();
    if (tp.requires_grad(ia)) {
      auto& ga = tp.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(ib)) {
      auto& gb = tp.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double k) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v *= k;
  const int ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, k](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += k * g[i];
  });
}

Var dot(Var a, Var b) {
  require_vector(a, "dot");
  require_same_shape(a, b, "dot");
  Tape& t = common_tape(a, b);
  const auto& av = a.value().storage();
  const auto& bv = b.value().storage();
  const double s = std::inner_product(av.begin(), av.end(), bv.begin(), 0.0);
  const int ia = a.id(), ib = b.id();
  return t.record(Tensor::scalar(s), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const double g = tp.grad(self)[0];
    const auto& av = tp.value(ia).storage();
    const auto& bv = tp.value(ib).storage();
    if (tp.requires_grad(ia)) {
      auto& ga = tp.grad(ia);
      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g * bv[i];
    }
    if (tp.requires_grad(ib)) {
      auto& gb = tp.grad(ib);
      for (std::size_t i = 0; i < av.size(); ++i) gb[i] += g * av[i];
    }
  });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2) throw DimensionError("matmul: left operand must be a matrix, got " + shape_string(av.shape()));
  if (bv.rank() == 0) throw DimensionError("matmul: right operand must be a vector or matrix");
  const std::size_t m = av.shape()[0], k = av.shape()[1];
  const std::size_t kb = bv.shape()[0];
  const std::size_t n = bv.rank() == 2 ? bv.shape()[1] : 1;
  if (k != kb)
    throw DimensionError("matmul: inner dimensions " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  Tape& t = common_tape(a, b);
  Tensor out = bv.rank() == 2 ? Tensor(Shape{m, n}) : Tensor(Shape{m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& av = tp.value(ia).storage();
    const auto& bv = tp.value(ib).storage();
    if (tp.requires_grad(ia)) {
      auto& ga = tp.grad(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (tp.requires_grad(ib)) {
      auto& gb = tp.grad(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

Var affine(Var w, Var x, Var b) {
  const Tensor& wv = w.value();
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (wv.rank() != 2 || xv.rank() != 1 || bv.rank() != 1)
    throw DimensionError("affine: expected W[out,in], x[in], b[out]");
  const std::size_t out_dim = wv.shape()[0], in_dim = wv.shape()[1];
  if (xv.size() != in_dim || bv.size() != out_dim)
    throw DimensionError("affine: W " + shape_string(wv.shape()) + ", x " + shape_string(xv.shape()) + ", b " +
                         shape_string(bv.shape()));
  Tape& t = common_tape(w, x);
  common_tape(w, b);
  Tensor out = bv;
  for (std::size_t r = 0; r < out_dim; ++r) {
    const double* row = wv.data().data() + r * in_dim;
    double s = 0.0;
    for (std::size_t c = 0; c < in_dim; ++c) s += row[c] * xv[c];
    out[r] += s;
  }
  const int iw = w.id(), ix = x.id(), ib = b.id();
  return t.record(std::move(out), {iw, ix, ib}, [iw, ix, ib, out_dim, in_dim](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& wv = tp.value(iw).storage();
    const auto& xv = tp.value(ix).storage();
    if (tp.requires_grad(iw)) {
      auto& gw = tp.grad(iw);
      for (std::size_t r = 0; r < out_dim; ++r) {
        const double gr = g[r];
        if (gr == 0.0) continue;
        double* row = &gw[r * in_dim];
        for (std::size_t c = 0; c < in_dim; ++c) row[c] += gr * xv[c];
      }
    }
    if (tp.requires_grad(ix)) {
      auto& gx = tp.grad(ix);
      for (std::size_t r = 0; r < out_dim; ++r) {
        const double gr = g[r];
        if (gr == 0.0) continue;
        const double* row = &wv[r * in_dim];
        for (std::size_t c = 0; c < in_dim; ++c) gx[c] += gr * row[c];
      }
    }
    if (tp.requires_grad(ib)) {
      auto& gb = tp.grad(ib);
      for (std::size_t r = 0; r < out_dim; ++r) gb[r] += g[r];
    }
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw DimensionError("transpose: expected a matrix");
  const std::size_t r = av.shape()[0], c = av.shape()[1];
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  const int ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, r, c](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

Var outer(Var a, Var b) {
  require_vector(a, "outer");
  require_vector(b, "outer");
  Tape& t = common_tape(a, b);
  const auto& av = a.value().storage();
  const auto& bv = b.value().storage();
  const std::size_t n = av.size(), m = bv.size();
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = av[i] * bv[j];
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, n, m](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& av = tp.value(ia).storage();
    const auto& bv = tp.value(ib).storage();
    if (tp.requires_grad(ia)) {
      auto& ga = tp.grad(ia);
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * bv[j];
        ga[i] += s;
      }
    }
    if (tp.requires_grad(ib)) {
      auto& gb = tp.grad(ib);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j] * av[i];
    }
  });
}

Var flatten(Var a) {
  Tensor out = a.value().reshaped(Shape{a.size()});
  const int ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var tanh(Var a) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v = std::tanh(v);
  const int ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& y = tp.value(self).storage();
    auto& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var logistic(Var a) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v = stable_logistic(v);
  const int ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& y = tp.value(self).storage();
    auto& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var exp(Var a) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v = std::exp(v);
  const int ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& y = tp.value(self).storage();
    auto& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

Var log_floor(Var a, double floor) {
  if (!(floor > 0.0)) throw ParameterError("log_floor: floor must be positive");
  Tensor out = a.value();
  for (auto& v : out.storage()) v = std::log(std::max(v, floor));
  const int ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, floor](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& x = tp.value(ia).storage();
    auto& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > floor) ga[i] += g[i] / x[i];
  });
}

Var square(Var a) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v = v * v;
  const int ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& x = tp.value(ia).storage();
    auto& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * x[i] * g[i];
  });
}

Var sum(Var a) {
  const auto& av = a.value().storage();
  const double s = std::accumulate(av.begin(), av.end(), 0.0);
  const int ia = a.id();
  return a.tape().record(Tensor::scalar(s), {ia}, [ia](Tape& tp, int self) {
    const double g = tp.grad(self)[0];
    for (auto& v : tp.grad(ia)) v += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.size();
  if (n == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var softmax(Var v, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("softmax: temperature must be positive");
  require_vector(v, "softmax");
  const auto& x = v.value().storage();
  const double mx = *std::max_element(x.begin(), x.end());
  Tensor out(Shape{x.size()});
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp((x[i] - mx) / temperature);
    z += out[i];
  }
  for (auto& e : out.storage()) e /= z;
  const int iv = v.id();
  return v.tape().record(std::move(out), {iv}, [iv, temperature](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& y = tp.value(self).storage();
    double gy = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) gy += g[i] * y[i];
    auto& gv = tp.grad(iv);
    for (std::size_t i = 0; i < g.size(); ++i) gv[i] += y[i] * (g[i] - gy) / temperature;
  });
}

Var log_softmax(Var v) {
  require_vector(v, "log_softmax");
  const auto& x = v.value().storage();
  const double mx = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double xi : x) z += std::exp(xi - mx);
  const double lse = mx + std::log(z);
  Tensor out(Shape{x.size()});
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
  const int iv = v.id();
  return v.tape().record(std::move(out), {iv}, [iv](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& y = tp.value(self).storage();
    const double gs = std::accumulate(g.begin(), g.end(), 0.0);
    auto& gv = tp.grad(iv);
    for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i] - std::exp(y[i]) * gs;
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat of zero parts");
  Tape& t = parts.front().tape();
  std::vector<int> ids;
  std::vector<std::size_t> sizes;
  std::vector<double> data;
  for (const Var& p : parts) {
    if (&p.tape() != &t) throw ContractError("operands recorded on different tapes");
    if (p.value().rank() > 1) throw DimensionError("concat: operands must be scalars or vectors");
    ids.push_back(p.id());
    sizes.push_back(p.size());
    const auto& v = p.value().storage();
    data.insert(data.end(), v.begin(), v.end());
  }
  auto parents = ids;
  return t.record(Tensor::vector(std::move(data)), std::move(parents),
                  [ids = std::move(ids), sizes = std::move(sizes)](Tape& tp, int self) {
                    const auto& g = tp.grad(self);
                    std::size_t off = 0;
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (tp.requires_grad(ids[k])) {
                        auto& gp = tp.grad(ids[k]);
                        for (std::size_t i = 0; i < sizes[k]; ++i) gp[i] += g[off + i];
                      }
                      off += sizes[k];
                    }
                  });
}

Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

Var slice(Var v, std::size_t begin, std::size_t length) {
  require_vector(v, "slice");
  if (begin + length > v.size()) throw DimensionError("slice out of range");
  const auto& x = v.value().storage();
  std::vector<double> data(x.begin() + static_cast<std::ptrdiff_t>(begin),
                           x.begin() + static_cast<std::ptrdiff_t>(begin + length));
  const int iv = v.id();
  return v.tape().record(Tensor::vector(std::move(data)), {iv}, [iv, begin](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& gv = tp.grad(iv);
    for (std::size_t i = 0; i < g.size(); ++i) gv[begin + i] += g[i];
  });
}

Var pick(Var v, std::size_t index) {
  if (index >= v.size()) throw DimensionError("pick index out of range");
  const int iv = v.id();
  return v.tape().record(Tensor::scalar(v.value()[index]), {iv}, [iv, index](Tape& tp, int self) {
    tp.grad(iv)[index] += tp.grad(self)[0];
  });
}

Var lower_triangular(Var entries, std::size_t n) {
  if (entries.size() != n * (n + 1) / 2)
    throw DimensionError("lower_triangular: need " + std::to_string(n * (n + 1) / 2) + " entries, got " +
                         std::to_string(entries.size()));
  const auto& e = entries.value().storage();
  Tensor out(Shape{n, n});
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) out[i * n + j] = e[k++];
  const int ie = entries.id();
  return entries.tape().record(std::move(out), {ie}, [ie, n](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ge = tp.grad(ie);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) ge[k++] += g[i * n + j];
  });
}

Var add_diagonal(Var m, double eps) {
  const Tensor& mv = m.value();
  if (mv.rank() != 2 || mv.shape()[0] != mv.shape()[1]) throw DimensionError("add_diagonal: expected a square matrix");
  Tensor out = mv;
  const std::size_t n = mv.shape()[0];
  for (std::size_t i = 0; i < n; ++i) out[i * n + i] += eps;
  const int im = m.id();
  return m.tape().record(std::move(out), {im}, [im](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& gm = tp.grad(im);
    for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
  });
}

Var kl_divergence(Var q, Var p) {
  require_vector(q, "kl_divergence");
  if (q.shape() != p.shape())
    throw DimensionError("kl_divergence: support sizes " + shape_string(q.shape()) + " vs " + shape_string(p.shape()));
  Tape& t = common_tape(q, p);
  const auto& qv = q.value().storage();
  const auto& pv = p.value().storage();
  double s = 0.0;
  for (std::size_t i = 0; i < qv.size(); ++i)
    if (qv[i] > 0.0) s += qv[i] * (std::log(qv[i]) - std::log(std::max(pv[i], kProbFloor)));
  const int iq = q.id(), ip = p.id();
  return t.record(Tensor::scalar(s), {iq, ip}, [iq, ip](Tape& tp, int self) {
    const double g = tp.grad(self)[0];
    const auto& qv = tp.value(iq).storage();
    const auto& pv = tp.value(ip).storage();
    if (tp.requires_grad(iq)) {
      auto& gq = tp.grad(iq);
      for (std::size_t i = 0; i < qv.size(); ++i)
        gq[i] += g * (std::log(std::max(qv[i], kProbFloor)) - std::log(std::max(pv[i], kProbFloor)) + 1.0);
    }
    if (tp.requires_grad(ip)) {
      auto& gp = tp.grad(ip);
      for (std::size_t i = 0; i < qv.size(); ++i)
        if (pv[i] > kProbFloor) gp[i] -= g * qv[i] / pv[i];
    }
  });
}

Var mse(Var a, Var b) {
  require_same_shape(a, b, "mse");
  Tape& t = common_tape(a, b);
  const auto& av = a.value().storage();
  const auto& bv = b.value().storage();
  const double n = static_cast<double>(av.size());
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  const int ia = a.id(), ib = b.id();
  return t.record(Tensor::scalar(s / n), {ia, ib}, [ia, ib, n](Tape& tp, int self) {
    const double g = tp.grad(self)[0];
    const auto& av = tp.value(ia).storage();
    const auto& bv = tp.value(ib).storage();
    for (std::size_t i = 0; i < av.size(); ++i) {
      const double d = 2.0 * (av[i] - bv[i]) / n * g;
      if (tp.requires_grad(ia)) tp.grad(ia)[i] += d;
      if (tp.requires_grad(ib)) tp.grad(ib)[i] -= d;
    }
  });
}

Var detach(Var a) { return a.tape().constant(a.value()); }

}  // namespace soma
