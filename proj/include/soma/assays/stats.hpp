#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace soma {

class RngStream;

double sample_mean(std::span<const double> v);
/// Linear-interpolation quantile (the usual "type 7" definition), q in [0, 1].
double quantile(std::span<const double> v, double q);
double median(std::span<const double> v);

struct Spread {
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
};
Spread spread(std::span<const double> v);

/// Pearson correlation; empty when either side has zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

/// 1-based ranks with ties sharing their mid-rank.
std::vector<double> mid_ranks(std::span<const double> v);

struct CorrelationTest {
  double rho = 0.0;
  double p = 1.0;
  bool exact = false;
};

/// Spearman rank correlation with a two-sided p-value: exact over all permutations for
/// n <= 10, normal approximation rho * sqrt(n - 1) otherwise.
CorrelationTest spearman(std::span<const double> x, std::span<const double> y);

/// Two-sided Monte-Carlo permutation p-value for Spearman's rho, (hits + 1) / (draws + 1).
double spearman_permutation_p(std::span<const double> x, std::span<const double> y, int draws, RngStream rng);

struct RankSumTest {
  double u = 0.0;  ///< U statistic of the first group
  double p = 1.0;
  bool exact = false;
};

/// Two-sided Mann-Whitney rank-sum test. Without ties and with n + m <= 40 the p-value comes
/// from the exact null distribution of U; otherwise from the tie-corrected normal approximation
/// with continuity correction. All-identical data gives p = 1.
RankSumTest mannwhitney(std::span<const double> a, std::span<const double> b);

double normal_two_sided_p(double z);

}  // namespace soma
