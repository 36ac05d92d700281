#include "soma/numcore/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace soma {

EigenDecomposition jacobi_eigen(const Tensor& m, double symmetry_tol) {
  if (m.rank() != 2 || m.rows() != m.cols()) throw ContractError("jacobi_eigen: matrix must be square");
  const std::size_t n = m.rows();
  double scale = 0.0;
  for (double v : m.storage()) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(m.at(i, j) - m.at(j, i)) > symmetry_tol * std::max(1.0, scale))
        throw ContractError("jacobi_eigen: matrix is not symmetric");

  Tensor a = m;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a.at(i, j) = a.at(j, i) = 0.5 * (m.at(i, j) + m.at(j, i));
  Tensor v = Tensor::identity(n);

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += a.at(i, j) * a.at(i, j);
    return std::sqrt(s);
  };
  double total = 0.0;
  for (double x : a.storage()) total += x * x;
  const double threshold = 1e-15 * std::sqrt(total);

  for (int sweep = 0; sweep < 100 && off_norm() > threshold; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v.at(k, p), vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a.at(x, x) < a.at(y, y); });
  EigenDecomposition out;
  out.vectors = Tensor(Shape{n, n});
  for (std::size_t k = 0; k < n; ++k) {
    out.values.push_back(a.at(order[k], order[k]));
    for (std::size_t r = 0; r < n; ++r) out.vectors.at(r, k) = v.at(r, order[k]);
  }
  return out;
}

std::vector<double> symmetric_eigenvalues(const Tensor& m, double symmetry_tol) {
  return jacobi_eigen(m, symmetry_tol).values;
}

PcaResult pca_fit_project(const Tensor& rows, std::size_t n_components) {
  if (rows.rank() != 2) throw DimensionError("pca_fit_project: expected a matrix of rows");
  const std::size_t n = rows.rows(), d = rows.cols();
  if (n_components == 0 || n_components > d) throw ContractError("pca_fit_project: n_components out of range");
  if (n < n_components) throw ContractError("pca_fit_project: fewer rows than components");

  PcaResult res;
  res.mean = Tensor(Shape{d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) res.mean[j] += rows.at(i, j);
  for (auto& x : res.mean.storage()) x /= static_cast<double>(n);

  Tensor centered = rows;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) centered.at(i, j) -= res.mean[j];

  Tensor cov(Shape{d, d});
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += centered.at(i, a) * centered.at(i, b);
      cov.at(a, b) = cov.at(b, a) = s / denom;
    }

  res.components = Tensor(Shape{n_components, d});
  res.projected = Tensor(Shape{n, n_components});
  double trace = 0.0, scale = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    trace += cov.at(j, j);
    scale += res.mean[j] * res.mean[j];
  }
  // Rounding in the mean leaves ~1e-32 of spurious spread on constant data.
  if (!(trace > 1e-24 * (1.0 + scale))) {
    res.zero_variance = true;
    res.explained_variance.assign(n_components, 0.0);
    for (std::size_t k = 0; k < n_components; ++k) res.components.at(k, k) = 1.0;
    return res;
  }

  const EigenDecomposition eig = jacobi_eigen(cov);
  for (std::size_t k = 0; k < n_components; ++k) {
    const std::size_t col = d - 1 - k;
    res.explained_variance.push_back(std::max(0.0, eig.values[col]));
    std::size_t arg = 0;
    for (std::size_t j = 0; j < d; ++j)
      if (std::abs(eig.vectors.at(j, col)) > std::abs(eig.vectors.at(arg, col)) + 1e-12) arg = j;
    const double sign = eig.vectors.at(arg, col) < 0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < d; ++j) res.components.at(k, j) = sign * eig.vectors.at(j, col);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n_components; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += centered.at(i, j) * res.components.at(k, j);
      res.projected.at(i, k) = s;
    }
  return res;
}

}  // namespace soma
