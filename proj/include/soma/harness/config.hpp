#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "soma/assays/assays.hpp"

namespace soma {

/// Malformed configuration text; carries the 1-based line number when one applies.
struct ConfigError : std::runtime_error {
  ConfigError(const std::string& source, int line, const std::string& message);
  int line;
};

struct HarnessConfig {
  std::vector<int> seeds{0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<std::string> cohorts{"full", "no_conation", "no_body_to_g"};
  std::uint64_t master_seed = 0;
  int workers = 0;  ///< 0 = one per hardware thread
  int checkpoint_every = 0;  ///< 0 = final checkpoint only
  int permutation_draws = 20000;
};

struct RunConfig {
  GridConfig env;
  AgentConfig agent;
  TrainerConfig trainer;
  AssayConfig assays;
  HarnessConfig harness;
};

/// Default pipeline (8 seeds x 120 episodes) used when no file is given.
RunConfig desk_config();

/// Parses "[section]" headers and "key = value" lines; '#' and ';' start comments. Keys not
/// set keep the values already in `base`.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>",
                       const RunConfig& base = desk_config());
RunConfig load_config(const std::string& path);

/// Applies SOMA_<SECTION>_<KEY> variables (upper case) found through `lookup`.
/// Returns the names of the overrides that were applied.
using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
std::vector<std::string> apply_env_overrides(RunConfig& cfg, const EnvLookup& lookup);
std::vector<std::string> apply_env_overrides(RunConfig& cfg);

/// Canonical "[section]\nkey = value" text of every setting; round-trips through parse_config.
std::string dump_config(const RunConfig& cfg);
/// FNV-1a of dump_config as 16 hex digits, leaving out the scheduling keys (workers,
/// checkpoint_every), which never change results.
std::string config_hash(const RunConfig& cfg);
/// Hash of the settings that determine training: env, agent, perspective, trainer, master_seed.
std::string training_hash(const RunConfig& cfg);

/// "0..7", "0,2,5" or a mix of both ("0..3,9").
std::vector<int> parse_seed_list(const std::string& text);
std::string format_seed_list(const std::vector<int>& seeds);

}  // namespace soma
