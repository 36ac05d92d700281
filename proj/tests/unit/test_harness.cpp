#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include "soma/harness/checkpoint.hpp"
#include "soma/harness/pipeline.hpp"
#include "soma/harness/rng.hpp"

using namespace soma;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("soma_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig tiny_config() {
  RunConfig cfg = desk_config();
  cfg.trainer.episodes = 3;
  cfg.trainer.warmup_episodes = 1;
  cfg.trainer.steps_per_episode = 160;
  cfg.assays.calibration_states = 50;
  cfg.harness.seeds = {0, 1};
  cfg.harness.permutation_draws = 200;
  cfg.harness.workers = 1;
  return cfg;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SOMA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("values land in their fields") {
    const RunConfig c = parse_config("[trainer]\nepisodes = 40\nlr = 0.002\n\n# note\n[harness]\nseeds = 0..2,7\n");
    CHECK(c.trainer.episodes == 40);
    CHECK(c.trainer.lr == 0.002);
    CHECK(c.harness.seeds == std::vector<int>{0, 1, 2, 7});
  }
  SUBCASE("errors carry line numbers") {
    auto line_of = [](const std::string& text) {
      try {
        parse_config(text, "t.ini");
      } catch (const ConfigError& e) {
        return e.line;
      }
      return -1;
    };
    CHECK(line_of("[trainer]\nepisodes = 10\nbogus = 1\n") == 3);
    CHECK(line_of("[nowhere]\n") == 1);
    CHECK(line_of("[trainer]\n\nepisodes\n") == 3);
    CHECK(line_of("episodes = 3\n") == 1);
    CHECK(line_of("[trainer]\nepisodes = ten\n") == 2);
    CHECK(line_of("[trainer\n") == 1);
  }
  SUBCASE("semantic checks") {
    CHECK_THROWS_AS(parse_config("[trainer]\nepisodes = 5\nwarmup_episodes = 9\n"), ConfigError);
  }
  SUBCASE("dump round trip") {
    RunConfig c = desk_config();
    c.agent.conative.temperature = 0.37;
    c.harness.seeds = {3, 5};
    const RunConfig back = parse_config(dump_config(c));
    CHECK(dump_config(back) == dump_config(c));
    CHECK(config_hash(back) == config_hash(c));
  }
  SUBCASE("hash ignores scheduling keys only") {
    RunConfig a = desk_config(), b = desk_config();
    b.harness.workers = 7;
    b.harness.checkpoint_every = 5;
    CHECK(config_hash(a) == config_hash(b));
    CHECK(training_hash(a) == training_hash(b));
    b.harness.seeds = {0};
    CHECK_FALSE(config_hash(a) == config_hash(b));
    CHECK(training_hash(a) == training_hash(b));
    b.trainer.lr = 0.5;
    CHECK_FALSE(training_hash(a) == training_hash(b));
  }
}

TEST_CASE("environment overrides") {
  RunConfig c = desk_config();
  const std::map<std::string, std::string> env{{"SOMA_TRAINER_EPISODES", "60"}, {"SOMA_AGENT_TEMPERATURE", "0.3"}};
  const auto applied = apply_env_overrides(c, [&](const std::string& k) -> std::optional<std::string> {
    const auto it = env.find(k);
    return it == env.end() ? std::nullopt : std::optional<std::string>(it->second);
  });
  CHECK(c.trainer.episodes == 60);
  CHECK(applied.size() >= 1);
  RunConfig bad = desk_config();
  CHECK_THROWS_AS(apply_env_overrides(bad, [](const std::string& k) -> std::optional<std::string> {
                    if (k == "SOMA_TRAINER_EPISODES") return "many";
                    return std::nullopt;
                  }),
                  ConfigError);
}

TEST_CASE("seed lists") {
  CHECK(parse_seed_list("0..3") == std::vector<int>{0, 1, 2, 3});
  CHECK(parse_seed_list("5,1,3") == std::vector<int>{5, 1, 3});
  CHECK(parse_seed_list("0..1,4") == std::vector<int>{0, 1, 4});
  CHECK_THROWS(parse_seed_list("0..2,1"));
  CHECK(format_seed_list({0, 1, 2, 3, 9}) == "0..3,9");
  CHECK_THROWS(parse_seed_list("3..1"));
  CHECK_THROWS(parse_seed_list("x"));
}

TEST_CASE("random streams") {
  const RngStream a(42);
  CHECK(a.bits_at(10) == RngStream(42).bits_at(10));
  CHECK_FALSE(a.substream("x").bits_at(0) == a.substream("y").bits_at(0));
  CHECK_FALSE(a.substream(1).bits_at(0) == a.substream(2).bits_at(0));
  RngStream s(7);
  const double u0 = s.uniform();
  CHECK(u0 == RngStream(7).uniform_at(0));
  CHECK(s.counter() == 1);
  double mean = 0.0, sq = 0.0;
  RngStream n(9);
  for (int i = 0; i < 20000; ++i) {
    const double v = n.normal();
    mean += v;
    sq += v * v;
  }
  CHECK(mean / 20000 == doctest::Approx(0.0).epsilon(0.03).scale(1.0));
  CHECK(sq / 20000 == doctest::Approx(1.0).epsilon(0.03));
  CHECK_FALSE(RngStreams(0).stream("run").key() == RngStreams(1).stream("run").key());
}

TEST_CASE("checkpoint integrity") {
  const RunConfig cfg = tiny_config();
  TrainingRun run(cfg.env, cfg.agent, cfg.trainer, make_cohort("full"), 0, 0);
  std::vector<EpisodeLog> history{run.train_episode()};
  const Checkpoint ck = capture_checkpoint(run, cfg, history);
  const std::string text = serialize_checkpoint(ck);
  CHECK(serialize_checkpoint(parse_checkpoint(text)) == text);

  SUBCASE("flipped digit is caught") {
    std::string bad = text;
    const auto pos = bad.find("\"next_episode\": 1");
    REQUIRE(pos != std::string::npos);
    bad[pos + 16] = '2';
    CHECK_THROWS_AS(parse_checkpoint(bad), IntegrityError);
  }
  SUBCASE("truncation is caught") { CHECK_THROWS_AS(parse_checkpoint(text.substr(0, text.size() / 2)), IntegrityError); }
  SUBCASE("restore under another training config") {
    RunConfig other = cfg;
    other.trainer.lr = 0.01;
    CHECK_THROWS_AS(restore_run(ck, other), IntegrityError);
  }
}

TEST_CASE("pipeline") {
  const RunConfig cfg = tiny_config();
  const fs::path dir = scratch("pipeline");

  SUBCASE("missing cohort") {
    train_cohorts(cfg, {"full", "no_conation"}, cfg.harness.seeds, (dir / "train").string());
    CHECK_THROWS_AS(run_assays((dir / "train").string()), MissingCohortError);
  }
  SUBCASE("train, retrain, assay") {
    const TrainResult first = train_cohorts(cfg, cfg.harness.cohorts, cfg.harness.seeds, (dir / "a").string());
    CHECK_FALSE(first.failed());
    CHECK(first.runs.size() == 6);
    std::set<std::string> hashes;
    for (const auto& cohort : cfg.harness.cohorts)
      for (int seed : cfg.harness.seeds) {
        const fs::path ck = dir / "a" / run_directory(cohort, seed) / "checkpoint.json";
        REQUIRE(fs::exists(ck));
        hashes.insert(load_checkpoint(ck.string()).run_hash);
      }
    CHECK(hashes.size() == 6);

    train_cohorts(cfg, cfg.harness.cohorts, cfg.harness.seeds, (dir / "b").string());
    for (const auto& cohort : cfg.harness.cohorts)
      for (int seed : cfg.harness.seeds) {
        const std::string rel = run_directory(cohort, seed);
        CHECK(slurp(dir / "a" / rel / "checkpoint.json") == slurp(dir / "b" / rel / "checkpoint.json"));
      }

    const AssayBundle one = run_assays((dir / "a").string());
    CHECK(one.runs.size() == 6);
    write_assay_outputs(one, (dir / "out1").string());
    for (const char* f : {"report.csv", "summary.json", "rollouts.csv", "manifest.json"})
      CHECK_MESSAGE(fs::exists(dir / "out1" / f), f);
    CHECK(fs::exists(dir / "out1" / "figures"));
    const std::string report = slurp(dir / "out1" / "report.csv");
    CHECK(report.rfind("# config_hash " + config_hash(cfg), 0) == 0);

    const AssayBundle two = run_assays((dir / "b").string());
    CHECK(report_csv(one) == report_csv(two));
    CHECK(summary_json(one) == summary_json(two));

    for (const auto& r : one.runs) {
      CHECK(r.row.pre_shock_identical);
      CHECK(r.row.shock_injected == -0.08 * 20);
      double total = 0.0;
      for (double z : r.row.occupancy) total += z;
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("master seed changes every stochastic output") {
  RunConfig a = tiny_config(), b = tiny_config();
  b.harness.master_seed = 1;
  TrainingRun ra(a.env, a.agent, a.trainer, make_cohort("full"), 0, a.harness.master_seed);
  TrainingRun rb(b.env, b.agent, b.trainer, make_cohort("full"), 0, b.harness.master_seed);
  CHECK_FALSE(ra.agent().encoder_obs.weight.value == rb.agent().encoder_obs.weight.value);
  const EpisodeLog la = ra.train_episode(true), lb = rb.train_episode(true);
  CHECK_FALSE(la.losses.total == lb.losses.total);
  // The world itself carries no randomness beyond observation noise.
  CHECK(ra.env().affordance(3) == rb.env().affordance(3));
}

TEST_CASE("command-line exit codes") {
  const fs::path dir = scratch("cli");
  const std::string out = (dir / "train").string();
  const std::string common = " --episodes 2 --seeds 0 --workers 1 --out " + out;
  CHECK(run_cli("train --cohort bogus" + common) == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("train --cohort full" + common) == 0);
  CHECK(fs::exists(dir / "train" / run_directory("full", 0) / "checkpoint.json"));
  CHECK(run_cli("assay " + out + " --out " + (dir / "assay").string()) == 2);

  const fs::path ck = dir / "train" / run_directory("full", 0) / "checkpoint.json";
  std::string text = slurp(ck);
  text[text.size() / 2] = text[text.size() / 2] == '1' ? '2' : '1';
  std::ofstream(ck, std::ios::binary) << text;
  CHECK(run_cli("inspect " + ck.string()) == 1);

  const fs::path cfg = dir / "bad.ini";
  std::ofstream(cfg) << "[trainer]\nepisodes = -\n";
  CHECK(run_cli("train --config " + cfg.string() + common) == 2);
  fs::remove_all(dir);
}
