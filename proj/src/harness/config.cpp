#include "soma/harness/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "soma/harness/rng.hpp"

namespace soma {

ConfigError::ConfigError(const std::string& source, int line_, const std::string& message)
    : std::runtime_error(line_ > 0 ? source + ":" + std::to_string(line_) + ": " + message : source + ": " + message),
      line(line_) {}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw std::invalid_argument("expected a number, got '" + s + "'");
  return v;
}

template <typename Int>
Int parse_int(const std::string& s) {
  Int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::invalid_argument("expected an integer, got '" + s + "'");
  return v;
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

Field real(std::string section, std::string key, std::function<double&(RunConfig&)> ref,
           std::function<bool(double)> valid = {}, std::string rule = {}) {
  return {section, key,
          [=](RunConfig& c, const std::string& v) {
            const double x = parse_double(v);
            require(!valid || valid(x), key + " must be " + rule);
            ref(c) = x;
          },
          [=](const RunConfig& c) { return format_double(ref(const_cast<RunConfig&>(c))); }};
}

template <typename Int>
Field integer(std::string section, std::string key, std::function<Int&(RunConfig&)> ref, Int min_value) {
  return {section, key,
          [=](RunConfig& c, const std::string& v) {
            const Int x = parse_int<Int>(v);
            require(x >= min_value, key + " must be >= " + std::to_string(min_value));
            ref(c) = x;
          },
          [=](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }};
}

bool positive(double x) { return x > 0.0; }
bool non_negative(double x) { return x >= 0.0; }
bool unit_interval(double x) { return x >= 0.0 && x <= 1.0; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    // [env]
    f.push_back(integer<int>("env", "height", [](RunConfig& c) -> int& { return c.env.height; }, 3));
    f.push_back(integer<int>("env", "width", [](RunConfig& c) -> int& { return c.env.width; }, 3));
    f.push_back(real("env", "sigma_left", [](RunConfig& c) -> double& { return c.env.sigma_left; }, non_negative, ">= 0"));
    f.push_back(real("env", "sigma_right", [](RunConfig& c) -> double& { return c.env.sigma_right; }, non_negative, ">= 0"));
    f.push_back(real("env", "affordance_slope", [](RunConfig& c) -> double& { return c.env.affordance_slope; }));
    f.push_back(real("env", "rho_aff", [](RunConfig& c) -> double& { return c.env.rho_aff; }));
    f.push_back(real("env", "c_met", [](RunConfig& c) -> double& { return c.env.c_met; }));
    f.push_back(real("env", "c_move", [](RunConfig& c) -> double& { return c.env.c_move; }));
    f.push_back(real("env", "lambda_aff", [](RunConfig& c) -> double& { return c.env.lambda_aff; }));
    f.push_back(real("env", "sigma_sil", [](RunConfig& c) -> double& { return c.env.sigma_sil; }, non_negative, ">= 0"));
    f.push_back(integer<int>("env", "tendency_horizon", [](RunConfig& c) -> int& { return c.env.tendency_horizon; }, 1));
    f.push_back(real("env", "u_reset", [](RunConfig& c) -> double& { return c.env.u_reset; }));
    // [agent]
    f.push_back(integer<std::size_t>("agent", "obs_hidden", [](RunConfig& c) -> std::size_t& { return c.agent.obs_hidden; }, 1));
    f.push_back(integer<std::size_t>("agent", "body_hidden", [](RunConfig& c) -> std::size_t& { return c.agent.body_hidden; }, 1));
    f.push_back(integer<std::size_t>("agent", "state_dim", [](RunConfig& c) -> std::size_t& { return c.agent.state_dim; }, 1));
    f.push_back(real("agent", "metric_epsilon", [](RunConfig& c) -> double& { return c.agent.metric_epsilon; }, positive, "> 0"));
    f.push_back(real("agent", "w_eta", [](RunConfig& c) -> double& { return c.agent.conative.w_eta; }));
    f.push_back(real("agent", "w_b", [](RunConfig& c) -> double& { return c.agent.conative.w_b; }));
    f.push_back(real("agent", "temperature", [](RunConfig& c) -> double& { return c.agent.conative.temperature; }, positive, "> 0"));
    // [perspective]
    f.push_back(integer<std::size_t>("perspective", "d_g", [](RunConfig& c) -> std::size_t& { return c.agent.perspective.d_g; }, 1));
    f.push_back(real("perspective", "alpha_bias_init", [](RunConfig& c) -> double& { return c.agent.perspective.alpha_bias_init; }));
    f.push_back(real("perspective", "alpha_weight_init", [](RunConfig& c) -> double& { return c.agent.perspective.alpha_weight_init; }));
    f.push_back(real("perspective", "episode_decay", [](RunConfig& c) -> double& { return c.agent.perspective.episode_decay; }, unit_interval, "in [0, 1]"));
    f.push_back(real("perspective", "obs_error_gain", [](RunConfig& c) -> double& { return c.agent.perspective.obs_error_gain; }, non_negative, ">= 0"));
    f.push_back(real("perspective", "body_error_gain", [](RunConfig& c) -> double& { return c.agent.perspective.body_error_gain; }, non_negative, ">= 0"));
    // [trainer]
    f.push_back(real("trainer", "lr", [](RunConfig& c) -> double& { return c.trainer.lr; }, positive, "> 0"));
    f.push_back(real("trainer", "gamma", [](RunConfig& c) -> double& { return c.trainer.gamma; }, unit_interval, "in [0, 1]"));
    f.push_back(real("trainer", "entropy_coef", [](RunConfig& c) -> double& { return c.trainer.entropy_coef; }, non_negative, ">= 0"));
    f.push_back(real("trainer", "lambda_body", [](RunConfig& c) -> double& { return c.trainer.lambda_body; }, non_negative, ">= 0"));
    f.push_back(real("trainer", "lambda_con", [](RunConfig& c) -> double& { return c.trainer.lambda_con; }, non_negative, ">= 0"));
    f.push_back(integer<int>("trainer", "episodes", [](RunConfig& c) -> int& { return c.trainer.episodes; }, 1));
    f.push_back(integer<int>("trainer", "warmup_episodes", [](RunConfig& c) -> int& { return c.trainer.warmup_episodes; }, 0));
    f.push_back(integer<int>("trainer", "steps_per_episode", [](RunConfig& c) -> int& { return c.trainer.steps_per_episode; }, 1));
    f.push_back(integer<int>("trainer", "update_interval", [](RunConfig& c) -> int& { return c.trainer.update_interval; }, 0));
    // [assays]
    f.push_back(integer<int>("assays", "occupancy_window", [](RunConfig& c) -> int& { return c.assays.occupancy_window; }, 1));
    f.push_back(integer<int>("assays", "calibration_states", [](RunConfig& c) -> int& { return c.assays.calibration_states; }, 2));
    f.push_back(integer<int>("assays", "probe_count", [](RunConfig& c) -> int& { return c.assays.probe_count; }, 1));
    f.push_back(real("assays", "shock_delta", [](RunConfig& c) -> double& { return c.assays.shock_delta; }));
    // [harness]
    f.push_back({"harness", "seeds",
                 [](RunConfig& c, const std::string& v) { c.harness.seeds = parse_seed_list(v); },
                 [](const RunConfig& c) { return format_seed_list(c.harness.seeds); }});
    f.push_back({"harness", "cohorts",
                 [](RunConfig& c, const std::string& v) {
                   std::vector<std::string> names;
                   std::stringstream ss(v);
                   for (std::string item; std::getline(ss, item, ',');) {
                     item = trim(item);
                     try {
                       make_cohort(item);
                     } catch (const ParameterError& e) {
                       throw std::invalid_argument(e.what());
                     }
                     if (std::find(names.begin(), names.end(), item) != names.end())
                       throw std::invalid_argument("cohort '" + item + "' listed twice");
                     names.push_back(item);
                   }
                   require(!names.empty(), "cohorts must not be empty");
                   c.harness.cohorts = names;
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (const auto& n : c.harness.cohorts) out += (out.empty() ? "" : ",") + n;
                   return out;
                 }});
    f.push_back(integer<std::uint64_t>("harness", "master_seed",
                                       [](RunConfig& c) -> std::uint64_t& { return c.harness.master_seed; }, 0));
    f.push_back(integer<int>("harness", "workers", [](RunConfig& c) -> int& { return c.harness.workers; }, 0));
    f.push_back(integer<int>("harness", "checkpoint_every", [](RunConfig& c) -> int& { return c.harness.checkpoint_every; }, 0));
    f.push_back(integer<int>("harness", "permutation_draws", [](RunConfig& c) -> int& { return c.harness.permutation_draws; }, 1));
    return f;
  }();
  return table;
}

const Field* find_field(const std::string& section, const std::string& key) {
  for (const Field& f : fields())
    if (f.section == section && f.key == key) return &f;
  return nullptr;
}

void check_consistency(const RunConfig& c, const std::string& source) {
  if (c.trainer.warmup_episodes > c.trainer.episodes)
    throw ConfigError(source, 0, "warmup_episodes exceeds episodes");
  if (c.assays.calibration_states < 2) throw ConfigError(source, 0, "calibration_states must be >= 2");
}

std::string upper(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return s;
}

}  // namespace

RunConfig desk_config() {
  RunConfig c;
  c.trainer.episodes = 120;
  c.trainer.warmup_episodes = 30;
  return c;
}

RunConfig parse_config(const std::string& text, const std::string& source, const RunConfig& base) {
  RunConfig cfg = base;
  std::istringstream in(text);
  std::string section;
  int line_no = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    std::string line = raw;
    if (const auto hash = line.find_first_of("#;"); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(source, line_no, "unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      const bool known = std::any_of(fields().begin(), fields().end(), [&](const Field& f) { return f.section == section; });
      if (!known) throw ConfigError(source, line_no, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(source, line_no, "expected 'key = value'");
    if (section.empty()) throw ConfigError(source, line_no, "setting outside of any [section]");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const Field* field = find_field(section, key);
    if (!field) throw ConfigError(source, line_no, "unknown key '" + key + "' in [" + section + "]");
    if (value.empty()) throw ConfigError(source, line_no, "missing value for '" + key + "'");
    try {
      field->set(cfg, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(source, line_no, e.what());
    }
  }
  check_consistency(cfg, source);
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, 0, "cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

std::vector<std::string> apply_env_overrides(RunConfig& cfg, const EnvLookup& lookup) {
  std::vector<std::string> applied;
  for (const Field& f : fields()) {
    const std::string name = "SOMA_" + upper(f.section) + "_" + upper(f.key);
    const auto value = lookup(name);
    if (!value) continue;
    try {
      f.set(cfg, trim(*value));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(name, 0, e.what());
    }
    applied.push_back(name);
  }
  check_consistency(cfg, "environment");
  return applied;
}

std::vector<std::string> apply_env_overrides(RunConfig& cfg) {
  return apply_env_overrides(cfg, [](const std::string& name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
  });
}

namespace {

std::string dump_fields(const RunConfig& cfg, const std::function<bool(const Field&)>& keep) {
  std::string out, section;
  for (const Field& f : fields()) {
    if (!keep(f)) continue;
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

std::string hash_text(const std::string& text) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

bool scheduling_only(const Field& f) {
  return f.section == "harness" && (f.key == "workers" || f.key == "checkpoint_every");
}

}  // namespace

std::string dump_config(const RunConfig& cfg) {
  return dump_fields(cfg, [](const Field&) { return true; });
}

std::string config_hash(const RunConfig& cfg) {
  return hash_text(dump_fields(cfg, [](const Field& f) { return !scheduling_only(f); }));
}

std::string training_hash(const RunConfig& cfg) {
  return hash_text(dump_fields(cfg, [](const Field& f) {
    return f.section != "assays" && (f.section != "harness" || f.key == "master_seed");
  }));
}

std::vector<int> parse_seed_list(const std::string& text) {
  std::vector<int> seeds;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (item.empty()) throw std::invalid_argument("empty entry in seed list '" + text + "'");
    if (const auto dots = item.find(".."); dots != std::string::npos) {
      const int lo = parse_int<int>(trim(item.substr(0, dots)));
      const int hi = parse_int<int>(trim(item.substr(dots + 2)));
      if (hi < lo) throw std::invalid_argument("seed range '" + item + "' is descending");
      for (int s = lo; s <= hi; ++s) seeds.push_back(s);
    } else {
      seeds.push_back(parse_int<int>(item));
    }
  }
  if (seeds.empty()) throw std::invalid_argument("seed list is empty");
  for (int s : seeds)
    if (s < 0) throw std::invalid_argument("seeds must be non-negative");
  std::vector<int> sorted = seeds;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw std::invalid_argument("seed list contains duplicates");
  return seeds;
}

std::string format_seed_list(const std::vector<int>& seeds) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size();) {
    std::size_t j = i;
    while (j + 1 < seeds.size() && seeds[j + 1] == seeds[j] + 1) ++j;
    if (!out.empty()) out += ",";
    out += j > i + 1 ? std::to_string(seeds[i]) + ".." + std::to_string(seeds[j]) : std::to_string(seeds[i]);
    if (j == i + 1) out += "," + std::to_string(seeds[j]);
    i = j + 1;
  }
  return out;
}

}  // namespace soma
