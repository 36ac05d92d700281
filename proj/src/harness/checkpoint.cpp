#include "soma/harness/checkpoint.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "soma/harness/rng.hpp"

namespace soma {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "soma-checkpoint/1";

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json tensor_json(const Tensor& t) { return json{{"shape", t.shape()}, {"data", t.storage()}}; }

Tensor tensor_from(const json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

json log_json(const EpisodeLog& l) {
  return json{{"episode", l.episode},
              {"warmup", l.warmup},
              {"losses",
               {{"obs_pred", l.losses.obs_pred},
                {"actor", l.losses.actor},
                {"body", l.losses.body},
                {"conative", l.losses.conative},
                {"total", l.losses.total}}},
              {"occupancy", l.occupancy},
              {"mean_q", l.mean_q},
              {"mean_pi", l.mean_pi},
              {"mean_abs_dg", l.mean_abs_dg},
              {"mean_abs_dz", l.mean_abs_dz},
              {"final_u", l.final_u}};
}

EpisodeLog log_from(const json& j) {
  EpisodeLog l;
  l.episode = j.at("episode").get<int>();
  l.warmup = j.at("warmup").get<bool>();
  const json& ls = j.at("losses");
  l.losses = {ls.at("obs_pred").get<double>(), ls.at("actor").get<double>(), ls.at("body").get<double>(),
              ls.at("conative").get<double>(), ls.at("total").get<double>()};
  l.occupancy = j.at("occupancy").get<std::array<double, kNumZones>>();
  l.mean_q = j.at("mean_q").get<std::array<double, kNumActions>>();
  l.mean_pi = j.at("mean_pi").get<std::array<double, kNumActions>>();
  l.mean_abs_dg = j.at("mean_abs_dg").get<double>();
  l.mean_abs_dz = j.at("mean_abs_dz").get<double>();
  l.final_u = j.at("final_u").get<double>();
  return l;
}

}  // namespace

std::string run_hash(const RunConfig& cfg, const std::string& cohort, int seed) {
  return hex64(fnv1a64(training_hash(cfg) + "\n[run]\ncohort = " + cohort + "\nseed = " + std::to_string(seed) + "\n"));
}

Checkpoint capture_checkpoint(TrainingRun& run, const RunConfig& cfg, const std::vector<EpisodeLog>& history) {
  Checkpoint ck;
  ck.config_hash = training_hash(cfg);
  ck.run_hash = run_hash(cfg, run.cohort().name, run.seed());
  ck.config_text = dump_config(cfg);
  ck.cohort = run.cohort().name;
  ck.seed = run.seed();
  ck.master_seed = run.master_seed();
  ck.next_episode = run.next_episode();
  ck.g = run.g();
  ck.adam = run.adam();
  for (const Parameter* p : run.agent().parameters()) ck.parameters.push_back(*p);
  for (const EpisodeLog& l : history) {
    EpisodeLog copy = l;
    copy.trajectory.clear();
    ck.history.push_back(std::move(copy));
  }
  return ck;
}

TrainingRun restore_run(const Checkpoint& ck, const RunConfig& cfg) {
  if (training_hash(cfg) != ck.config_hash)
    throw IntegrityError("checkpoint was written under training config " + ck.config_hash + ", current config is " +
                         training_hash(cfg));
  TrainingRun run(cfg.env, cfg.agent, cfg.trainer, make_cohort(ck.cohort), ck.seed, ck.master_seed);
  auto params = run.agent().parameters();
  if (params.size() != ck.parameters.size()) throw IntegrityError("checkpoint parameter count does not match the agent");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& src = ck.parameters[i];
    if (src.name != params[i]->name || src.value.shape() != params[i]->value.shape())
      throw IntegrityError("checkpoint parameter '" + src.name + "' does not match agent parameter '" +
                           params[i]->name + "'");
    params[i]->value = src.value;
    params[i]->zero_grad();
  }
  if (ck.adam.m.size() != params.size() || ck.adam.v.size() != params.size())
    throw IntegrityError("checkpoint optimizer state does not match the agent");
  run.restore(ck.next_episode, ck.g, ck.adam);
  return run;
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  json params = json::array();
  for (const Parameter& p : ck.parameters) params.push_back({{"name", p.name}, {"value", tensor_json(p.value)}});
  json m = json::array(), v = json::array();
  for (const Tensor& t : ck.adam.m) m.push_back(tensor_json(t));
  for (const Tensor& t : ck.adam.v) v.push_back(tensor_json(t));
  json history = json::array();
  for (const EpisodeLog& l : ck.history) history.push_back(log_json(l));

  json payload{{"config_hash", ck.config_hash},
               {"run_hash", ck.run_hash},
               {"config", ck.config_text},
               {"cohort", ck.cohort},
               {"seed", ck.seed},
               {"master_seed", ck.master_seed},
               {"next_episode", ck.next_episode},
               {"g", tensor_json(ck.g)},
               {"adam",
                {{"beta1", ck.adam.beta1},
                 {"beta2", ck.adam.beta2},
                 {"eps", ck.adam.eps},
                 {"step", ck.adam.step},
                 {"m", m},
                 {"v", v}}},
               {"parameters", params},
               {"history", history}};
  const std::string body = payload.dump();
  json doc{{"format", kFormat}, {"config_hash", ck.config_hash}, {"checksum", hex64(fnv1a64(body))},
           {"payload", payload}};
  return doc.dump(1) + "\n";
}

Checkpoint parse_checkpoint(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != kFormat) throw IntegrityError("unknown checkpoint format");
    const json& p = doc.at("payload");
    if (hex64(fnv1a64(p.dump())) != doc.at("checksum").get<std::string>())
      throw IntegrityError("checkpoint checksum mismatch");
    Checkpoint ck;
    ck.config_hash = p.at("config_hash").get<std::string>();
    ck.run_hash = p.at("run_hash").get<std::string>();
    ck.config_text = p.at("config").get<std::string>();
    ck.cohort = p.at("cohort").get<std::string>();
    ck.seed = p.at("seed").get<int>();
    ck.master_seed = p.at("master_seed").get<std::uint64_t>();
    ck.next_episode = p.at("next_episode").get<int>();
    ck.g = tensor_from(p.at("g"));
    const json& a = p.at("adam");
    ck.adam.beta1 = a.at("beta1").get<double>();
    ck.adam.beta2 = a.at("beta2").get<double>();
    ck.adam.eps = a.at("eps").get<double>();
    ck.adam.step = a.at("step").get<long>();
    for (const json& t : a.at("m")) ck.adam.m.push_back(tensor_from(t));
    for (const json& t : a.at("v")) ck.adam.v.push_back(tensor_from(t));
    for (const json& q : p.at("parameters")) ck.parameters.emplace_back(q.at("name").get<std::string>(), tensor_from(q.at("value")));
    for (const json& l : p.at("history")) ck.history.push_back(log_from(l));
    return ck;
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("checkpoint is malformed: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw IntegrityError(std::string("checkpoint is malformed: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << serialize_checkpoint(ck);
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, target);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace soma
