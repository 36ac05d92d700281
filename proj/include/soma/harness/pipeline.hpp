#pragma once

#include <functional>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "soma/assays/criteria.hpp"
#include "soma/harness/checkpoint.hpp"

namespace soma {

inline constexpr const char* kCodeVersion = "soma 1.0.0";

/// Runs fn(0..n-1) on up to `workers` threads (0 = hardware concurrency). The first exception
/// thrown by any task is rethrown after all workers have joined.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

/// A required cohort has no complete runs in the training directory.
struct MissingCohortError : std::runtime_error {
  MissingCohortError(const std::string& cohort_, const std::string& what) : std::runtime_error(what), cohort(cohort_) {}
  std::string cohort;
};

struct RunRecord {
  std::string cohort;
  int seed = 0;
  std::string status;  ///< complete | aborted | failed
  int episodes = 0;
  int aborted_episode = -1;
  std::string message;
  std::string checkpoint;  ///< relative to the training directory
  std::string training_log;
};

struct TrainResult {
  std::vector<RunRecord> runs;
  bool aborted() const;
  bool failed() const;
};

std::string run_directory(const std::string& cohort, int seed);

/// Trains every (cohort, seed) pair, resuming from existing checkpoints written under the same
/// config. Writes checkpoints, training logs, the effective config and manifest.json into out_dir.
TrainResult train_cohorts(const RunConfig& cfg, const std::vector<std::string>& cohorts, const std::vector<int>& seeds,
                          const std::string& out_dir, std::ostream* progress = nullptr);

/// Training-log CSV for one run (header comment carries the hashes).
std::string training_log_csv(const std::vector<EpisodeLog>& logs, const std::string& config_hash,
                             const std::string& run_hash);

struct AssayBundle {
  RunConfig config;
  std::string config_hash;
  std::uint64_t probe_hash = 0;
  std::vector<RunAssays> runs;  ///< cohort-major in config order, seeds ascending
  FindingStats stats;
  std::vector<CriterionResult> findings;
};

/// Loads the training manifest and checkpoints from train_dir and runs the assay battery.
/// Throws MissingCohortError when one of the three cohorts lacks a complete run for some seed.
/// A negative `workers` keeps the value stored with the training config.
AssayBundle run_assays(const std::string& train_dir, std::ostream* progress = nullptr, int workers = -1);

/// report.csv, summary.json, rollouts.csv, figures/*.svg and manifest.json.
void write_assay_outputs(const AssayBundle& bundle, const std::string& out_dir);

std::string report_csv(const AssayBundle& bundle);
std::string rollouts_csv(const AssayBundle& bundle);
std::string calibration_csv(const AssayBundle& bundle);
std::string summary_json(const AssayBundle& bundle);

/// Criteria that need no trained agents (numerics, environment) plus the firewall on a live
/// batch of the first available run.
std::vector<CriterionResult> structural_checks(const RunConfig& cfg, const std::string& train_dir);

struct ReplicateOutcome {
  TrainResult training;  ///< first pass; criteria are empty when it did not complete
  TrainResult repeat_training;
  std::vector<CriterionResult> criteria;
  bool completed() const { return !training.aborted() && !training.failed() && !repeat_training.aborted() &&
                                  !repeat_training.failed(); }
};

/// Trains into out/train, assays into out/assay and evaluates every criterion. With `repeat`
/// the pipeline runs again in out/repeat and the report bytes are compared; otherwise the
/// reproducibility criterion is reported as skipped.
ReplicateOutcome replicate(const RunConfig& cfg, const std::string& out, bool repeat, std::ostream* progress = nullptr);

}  // namespace soma
