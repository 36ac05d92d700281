#pragma once

#include <map>
#include <string>
#include <vector>

#include "soma/assays/assays.hpp"
#include "soma/assays/stats.hpp"

namespace soma {

enum class Verdict { Pass, Fail, Skipped };
const char* verdict_name(Verdict v);

struct CriterionResult {
  int id = 0;
  std::string name;
  Verdict verdict = Verdict::Skipped;
  std::string detail;
};

std::string format_criterion(const CriterionResult& c);

struct CohortStats {
  std::string name;
  int n = 0;
  Spread top_right, bottom, q_gap, calibration_r, pca_displacement, spectrum_distance, state_distance,
      shock_magnitude;
  std::array<Spread, kNumActions> q;
};

struct FindingStats {
  std::vector<CohortStats> cohorts;
  /// Rank-sum tests keyed "a vs b".
  std::map<std::string, RankSumTest> spectrum_tests;
  std::map<std::string, RankSumTest> displacement_tests;
  CorrelationTest residue;
  double residue_permutation_p = 1.0;
  int residue_n = 0;
  bool pre_shock_identical = true;
  bool injections_exact = true;
  double expected_injection = -1.6;

  const CohortStats* cohort(const std::string& name) const;
};

/// `expected_injection` is the exact per-rollout shock total every row must report.
FindingStats compute_finding_stats(const std::vector<AssayRow>& rows, const std::vector<std::string>& cohort_order,
                                   int permutation_draws, const RngStream& rng, double expected_injection = -1.6);

/// Criteria 4-9. Statistical comparisons are SKIPPED when a cohort has fewer than
/// `min_seeds` seeds or a required cohort is absent.
std::vector<CriterionResult> evaluate_findings(const FindingStats& stats, int min_seeds = 8);

}  // namespace soma
