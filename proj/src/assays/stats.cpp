#include "soma/assays/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "soma/harness/rng.hpp"
#include "soma/numcore/tensor.hpp"

namespace soma {

namespace {

void require_same_length(std::span<const double> x, std::span<const double> y, const char* who) {
  if (x.size() != y.size()) throw DimensionError(std::string(who) + ": samples differ in length");
}

double pearson_or_zero(std::span<const double> x, std::span<const double> y) {
  return pearson(x, y).value_or(0.0);
}

}  // namespace

double sample_mean(std::span<const double> v) {
  if (v.empty()) throw ContractError("mean of an empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double quantile(std::span<const double> v, double q) {
  if (v.empty()) throw ContractError("quantile of an empty sample");
  if (q < 0.0 || q > 1.0) throw ParameterError("quantile level outside [0, 1]");
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

double median(std::span<const double> v) { return quantile(v, 0.5); }

Spread spread(std::span<const double> v) { return {median(v), quantile(v, 0.25), quantile(v, 0.75)}; }

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  require_same_length(x, y, "pearson");
  if (x.size() < 2) return std::nullopt;
  const double mx = sample_mean(x), my = sample_mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> mid_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

CorrelationTest spearman(std::span<const double> x, std::span<const double> y) {
  require_same_length(x, y, "spearman");
  if (x.size() < 3) throw ContractError("spearman needs at least 3 pairs");
  const std::vector<double> rx = mid_ranks(x), ry = mid_ranks(y);
  CorrelationTest out;
  out.rho = pearson_or_zero(rx, ry);
  const std::size_t n = x.size();
  if (n <= 10) {
    out.exact = true;
    std::vector<double> perm = ry;
    std::sort(perm.begin(), perm.end());
    const double target = std::abs(out.rho) - 1e-12;
    long hits = 0, total = 0;
    do {
      ++total;
      if (std::abs(pearson_or_zero(rx, perm)) >= target) ++hits;
    } while (std::next_permutation(perm.begin(), perm.end()));
    out.p = static_cast<double>(hits) / static_cast<double>(total);
  } else {
    out.p = normal_two_sided_p(out.rho * std::sqrt(static_cast<double>(n - 1)));
  }
  return out;
}

double spearman_permutation_p(std::span<const double> x, std::span<const double> y, int draws, RngStream rng) {
  require_same_length(x, y, "spearman_permutation_p");
  if (draws < 1) throw ParameterError("permutation draws must be positive");
  const std::vector<double> rx = mid_ranks(x);
  std::vector<double> ry = mid_ranks(y);
  const double target = std::abs(pearson_or_zero(rx, ry)) - 1e-12;
  long hits = 0;
  for (int d = 0; d < draws; ++d) {
    for (std::size_t i = ry.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng.next_bits() % i);
      std::swap(ry[i - 1], ry[j]);
    }
    if (std::abs(pearson_or_zero(rx, ry)) >= target) ++hits;
  }
  return static_cast<double>(hits + 1) / static_cast<double>(draws + 1);
}

RankSumTest mannwhitney(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size(), m = b.size();
  if (n < 3 || m < 3) throw ContractError("mannwhitney needs at least 3 values per group");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::vector<double> ranks = mid_ranks(pooled);
  const double r1 = std::accumulate(ranks.begin(), ranks.begin() + static_cast<long>(n), 0.0);
  RankSumTest out;
  out.u = r1 - static_cast<double>(n * (n + 1)) / 2.0;
  const double nm = static_cast<double>(n * m);

  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back()) return out;
  double tie_term = 0.0;
  bool ties = false;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    if (t > 1) ties = true;
    tie_term += t * t * t - t;
    i = j + 1;
  }

  if (!ties && n + m <= 40) {
    // counts[k][u]: number of arrangements of k first-group items among the
    // remaining positions giving U = u, built by the standard recursion.
    const std::size_t umax = n * m;
    std::vector<std::vector<std::vector<double>>> f(n + 1, std::vector<std::vector<double>>(m + 1));
    for (std::size_t i = 0; i <= n; ++i)
      for (std::size_t j = 0; j <= m; ++j) {
        f[i][j].assign(i * j + 1, 0.0);
        if (i == 0 || j == 0) {
          f[i][j][0] = 1.0;
          continue;
        }
        for (std::size_t u = 0; u <= i * j; ++u) {
          double c = 0.0;
          if (u >= j && u - j <= (i - 1) * j) c += f[i - 1][j][u - j];
          if (u <= i * (j - 1)) c += f[i][j - 1][u];
          f[i][j][u] = c;
        }
      }
    const auto& dist = f[n][m];
    const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
    const double lo = std::min(out.u, nm - out.u);
    double tail = 0.0;
    for (std::size_t u = 0; u <= umax && static_cast<double>(u) <= lo + 1e-9; ++u) tail += dist[u];
    out.p = std::min(1.0, 2.0 * tail / total);
    out.exact = true;
    return out;
  }

  const double big_n = static_cast<double>(n + m);
  const double var = nm / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
  const double diff = std::abs(out.u - nm / 2.0);
  const double z = std::max(0.0, diff - 0.5) / std::sqrt(var);
  out.p = std::min(1.0, normal_two_sided_p(z));
  return out;
}

}  // namespace soma
