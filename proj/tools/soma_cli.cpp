#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "soma/harness/pipeline.hpp"

namespace fs = std::filesystem;
using namespace soma;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitAborted = 3;

struct CommonOptions {
  std::string config;
  std::vector<std::string> cohorts;
  std::string seeds;
  int episodes = 0;
  int workers = -1;
  long long master_seed = -1;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool with_cohort) {
  cmd->add_option("--config", o.config, "INI config file (defaults to the desk-scale settings)");
  if (with_cohort)
    cmd->add_option("--cohort", o.cohorts, "cohort(s) to train: full, no_conation, no_body_to_g")->delimiter(',');
  cmd->add_option("--seeds", o.seeds, "seed list such as 0..7 or 0,3,5");
  cmd->add_option("--episodes", o.episodes, "training episodes per run")->check(CLI::PositiveNumber);
  cmd->add_option("--workers", o.workers, "parallel workers (0 = one per hardware thread)")->check(CLI::NonNegativeNumber);
  cmd->add_option("--master-seed", o.master_seed, "master seed for every random stream")->check(CLI::NonNegativeNumber);
}

/// File, then SOMA_* environment variables, then command-line flags.
RunConfig resolve_config(const CommonOptions& o) {
  RunConfig cfg = o.config.empty() ? desk_config() : load_config(o.config);
  for (const auto& name : apply_env_overrides(cfg)) std::cerr << "override from environment: " << name << "\n";
  if (!o.cohorts.empty()) {
    for (const auto& c : o.cohorts) make_cohort(c);
    cfg.harness.cohorts = o.cohorts;
  }
  if (!o.seeds.empty()) {
    try {
      cfg.harness.seeds = parse_seed_list(o.seeds);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("--seeds", 0, e.what());
    }
  }
  if (o.episodes > 0) {
    cfg.trainer.episodes = o.episodes;
    if (cfg.trainer.warmup_episodes > o.episodes) cfg.trainer.warmup_episodes = o.episodes;
  }
  if (o.workers >= 0) cfg.harness.workers = o.workers;
  if (o.master_seed >= 0) cfg.harness.master_seed = static_cast<std::uint64_t>(o.master_seed);
  return cfg;
}

/// 0 on success, 3 when a run hit a non-finite loss, 1 for other run failures.
int report_training(const TrainResult& r) {
  int code = 0;
  for (const auto& run : r.runs) {
    if (run.status == "aborted") {
      std::cerr << "error: " << run.cohort << " seed " << run.seed << " aborted at episode " << run.aborted_episode
                << ": " << run.message << "\n";
      code = kExitAborted;
    } else if (run.status == "failed") {
      std::cerr << "error: " << run.cohort << " seed " << run.seed << " failed: " << run.message << "\n";
      if (code == 0) code = kExitFailure;
    }
  }
  return code;
}

void print_criteria(const std::vector<CriterionResult>& cs) {
  for (const auto& c : cs) std::cout << format_criterion(c) << "\n";
}

int cmd_train(const CommonOptions& o, const std::string& out) {
  const RunConfig cfg = resolve_config(o);
  std::cerr << "config " << config_hash(cfg) << ": " << cfg.harness.cohorts.size() << " cohort(s) x "
            << cfg.harness.seeds.size() << " seed(s), " << cfg.trainer.episodes << " episodes -> " << out << "\n";
  const TrainResult r = train_cohorts(cfg, cfg.harness.cohorts, cfg.harness.seeds, out, &std::cerr);
  return report_training(r);
}

int cmd_assay(const std::string& train_dir, const std::string& out, int workers) {
  const AssayBundle b = run_assays(train_dir, &std::cerr, workers);
  write_assay_outputs(b, out);
  std::cout << "wrote " << b.runs.size() << " report rows to " << (fs::path(out) / "report.csv").string() << "\n";
  print_criteria(b.findings);
  return 0;
}

int cmd_replicate(const CommonOptions& o, const std::string& out, bool repeat) {
  const RunConfig cfg = resolve_config(o);
  std::cerr << "replicate: config " << config_hash(cfg) << ", output " << out << "\n";
  const ReplicateOutcome r = replicate(cfg, out, repeat, &std::cerr);
  if (const int code = report_training(r.training)) return code;
  if (const int code = report_training(r.repeat_training)) return code;
  if (!repeat) std::cerr << "pass --repeat to check reproducibility with a second full run\n";

  print_criteria(r.criteria);
  std::string failed;
  for (const auto& c : r.criteria)
    if (c.verdict == Verdict::Fail) failed += " " + std::to_string(c.id);
  if (!failed.empty()) {
    std::cerr << "failed criteria:" << failed << "\n";
    return kExitFailure;
  }
  return 0;
}

int cmd_inspect(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  std::printf("checkpoint   %s\ncohort       %s\nseed         %d\nmaster seed  %llu\nnext episode %d\n", path.c_str(),
              ck.cohort.c_str(), ck.seed, static_cast<unsigned long long>(ck.master_seed), ck.next_episode);
  std::printf("train hash   %s\nrun hash     %s\nadam step    %ld\n\n", ck.config_hash.c_str(), ck.run_hash.c_str(),
              ck.adam.step);
  std::printf("%s\n", ck.config_text.c_str());
  std::printf("%-24s %-10s %12s %12s %12s %12s\n", "parameter", "shape", "mean", "std", "min", "max");
  std::size_t total = 0;
  for (const Parameter& p : ck.parameters) {
    const auto& v = p.value.storage();
    double mean = 0.0, sq = 0.0, lo = INFINITY, hi = -INFINITY;
    for (double x : v) {
      mean += x;
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    mean /= static_cast<double>(v.size());
    for (double x : v) sq += (x - mean) * (x - mean);
    total += v.size();
    std::printf("%-24s %-10s %12.5g %12.5g %12.5g %12.5g\n", p.name.c_str(), shape_string(p.value.shape()).c_str(),
                mean, std::sqrt(sq / static_cast<double>(v.size())), lo, hi);
  }
  std::printf("total scalars %zu\n\ng =", total);
  for (double x : ck.g.storage()) std::printf(" %.4f", x);
  std::printf("\n");
  if (!ck.history.empty()) {
    const EpisodeLog& l = ck.history.back();
    std::printf("last episode %d: obs_pred %.5g actor %.5g body %.5g conative %.5g, top-right %.3f\n", l.episode,
                l.losses.obs_pred, l.losses.actor, l.losses.body, l.losses.conative, l.occupancy[kTopRight]);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Body-grounded perspective agent: training, assays and replication"};
  app.require_subcommand(1);

  CommonOptions train_opts, rep_opts;
  std::string train_out = "out/train";
  auto* train = app.add_subcommand("train", "train cohorts and write checkpoints");
  add_common(train, train_opts, true);
  train->add_option("--out", train_out, "training output directory");

  std::string assay_in, assay_out = "out/assay";
  int assay_workers = -1;
  auto* assay = app.add_subcommand("assay", "run the assay battery on a training directory");
  assay->add_option("train_dir", assay_in, "directory written by 'train'")->required();
  assay->add_option("--out", assay_out, "assay output directory");
  assay->add_option("--workers", assay_workers, "parallel workers (0 = one per hardware thread)")
      ->check(CLI::NonNegativeNumber);

  std::string rep_out = "out";
  bool repeat = false;
  auto* rep = app.add_subcommand("replicate", "train all cohorts, run the assays and evaluate every criterion");
  add_common(rep, rep_opts, true);
  rep->add_option("--out", rep_out, "output directory (train/ and assay/ are created inside)");
  rep->add_flag("--repeat", repeat, "run the pipeline a second time and compare report bytes");

  std::string ck_path;
  auto* inspect = app.add_subcommand("inspect", "print a checkpoint's config and parameter statistics");
  inspect->add_option("checkpoint", ck_path, "checkpoint.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_opts, train_out);
    if (*assay) return cmd_assay(assay_in, assay_out, assay_workers);
    if (*rep) return cmd_replicate(rep_opts, rep_out, repeat);
    if (*inspect) return cmd_inspect(ck_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const MissingCohortError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return 0;
}
