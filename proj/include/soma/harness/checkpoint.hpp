#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "soma/harness/config.hpp"
#include "soma/trainer/trainer.hpp"

namespace soma {

/// Checkpoint file failed its checksum or structural validation.
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Everything needed to resume or assay one (cohort, seed) run.
struct Checkpoint {
  std::string config_hash;  ///< training_hash of the run's config
  std::string run_hash;     ///< training hash plus cohort and seed
  std::string config_text;  ///< dump_config of the run's config
  std::string cohort;
  int seed = 0;
  std::uint64_t master_seed = 0;
  int next_episode = 0;
  Tensor g;
  AdamState adam;
  std::vector<Parameter> parameters;
  std::vector<EpisodeLog> history;  ///< per-episode summaries, trajectories dropped
};

std::string run_hash(const RunConfig& cfg, const std::string& cohort, int seed);

Checkpoint capture_checkpoint(TrainingRun& run, const RunConfig& cfg, const std::vector<EpisodeLog>& history);

/// Rebuilds a run at the checkpointed episode. The run's architecture comes from `cfg`, which
/// must have the stored training hash.
TrainingRun restore_run(const Checkpoint& ck, const RunConfig& cfg);

std::string serialize_checkpoint(const Checkpoint& ck);
Checkpoint parse_checkpoint(const std::string& text);

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace soma
