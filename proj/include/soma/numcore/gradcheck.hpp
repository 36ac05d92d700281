#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "soma/numcore/ops.hpp"

namespace soma {

/// Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over every entry of every
/// parameter, with the numeric gradient from central differences of step h. `loss` must bind
/// the parameters through tape.param and return a scalar.
double gradient_error(const std::vector<Parameter*>& params, const std::function<Var(Tape&)>& loss,
                      double h = 1e-5, double floor = 1e-2);

struct GradCheckResult {
  std::string op;
  int instances = 0;
  double max_error = 0.0;
};

/// Randomised finite-difference checks of every differentiable primitive (and the GRU cell)
/// on small shapes; `instances` draws per operation.
std::vector<GradCheckResult> gradient_check_suite(int instances = 100, std::uint64_t seed = 1);

struct InvariantResult {
  std::string name;
  int instances = 0;
  double worst = 0.0;      ///< largest observed violation
  double tolerance = 0.0;
  bool ok() const { return worst <= tolerance; }
};

/// Randomised checks of softmax normalisation and shift invariance, KL(q, q) = 0, the metric
/// eigenvalue floor, PCA orthonormality and repeat-run determinism.
std::vector<InvariantResult> numeric_invariant_suite(int instances = 100, std::uint64_t seed = 2);

}  // namespace soma
