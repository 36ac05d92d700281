#include "soma/harness/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "soma/harness/figures.hpp"
#include "soma/numcore/gradcheck.hpp"

namespace soma {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string hash_header(const std::string& config_hash) { return "# config_hash " + config_hash + "\n"; }

std::string trajectory_header(const std::string& config_hash, const std::string& run_hash) {
  return hash_header(config_hash) + "# run_hash " + run_hash + "\nepisode,t,row,col,action,u,b_tilde,moved,zone\n";
}

void append_trajectory(std::ostream& out, const EpisodeLog& log) {
  for (const TrajectoryRow& r : log.trajectory)
    out << log.episode << ',' << r.t << ',' << r.row << ',' << r.col << ',' << r.action << ',' << num(r.u) << ','
        << num(r.b_tilde) << ',' << (r.moved ? 1 : 0) << ',' << r.zone << '\n';
}

/// Keeps the header and the rows of episodes before `next_episode`.
void truncate_trajectories(const fs::path& path, const std::string& header, int next_episode) {
  std::string kept = header;
  if (fs::exists(path)) {
    std::istringstream in(read_file(path));
    for (std::string line; std::getline(in, line);) {
      if (line.empty() || line[0] == '#' || line[0] == 'e') continue;
      int episode = -1;
      std::from_chars(line.data(), line.data() + line.size(), episode);
      if (episode >= 0 && episode < next_episode) kept += line + "\n";
    }
  }
  write_file(path, kept);
}

json record_json(const RunRecord& r) {
  return json{{"cohort", r.cohort},   {"seed", r.seed},
              {"status", r.status},   {"episodes", r.episodes},
              {"aborted_episode", r.aborted_episode}, {"message", r.message},
              {"checkpoint", r.checkpoint}, {"training_log", r.training_log},
              {"trajectories", r.checkpoint.empty() ? "" : (fs::path(r.training_log).parent_path() / "trajectories.csv").string()}};
}

RunRecord record_from(const json& j) {
  RunRecord r;
  r.cohort = j.at("cohort").get<std::string>();
  r.seed = j.at("seed").get<int>();
  r.status = j.at("status").get<std::string>();
  r.episodes = j.at("episodes").get<int>();
  r.aborted_episode = j.at("aborted_episode").get<int>();
  r.message = j.at("message").get<std::string>();
  r.checkpoint = j.at("checkpoint").get<std::string>();
  r.training_log = j.at("training_log").get<std::string>();
  return r;
}

int cohort_rank(const std::string& name) {
  for (std::size_t i = 0; i < kCohortNames.size(); ++i)
    if (kCohortNames[i] == name) return static_cast<int>(i);
  return static_cast<int>(kCohortNames.size());
}

bool record_less(const RunRecord& a, const RunRecord& b) {
  const int ca = cohort_rank(a.cohort), cb = cohort_rank(b.cohort);
  if (ca != cb) return ca < cb;
  if (a.cohort != b.cohort) return a.cohort < b.cohort;
  return a.seed < b.seed;
}

RunRecord train_one(const RunConfig& cfg, const std::string& cohort, int seed, const fs::path& out_dir,
                    std::ostream* progress, std::mutex& io) {
  RunRecord rec;
  rec.cohort = cohort;
  rec.seed = seed;
  const std::string rel = run_directory(cohort, seed);
  const fs::path dir = out_dir / rel;
  fs::create_directories(dir);
  rec.checkpoint = (fs::path(rel) / "checkpoint.json").string();
  rec.training_log = (fs::path(rel) / "training_log.csv").string();
  const fs::path ck_path = out_dir / rec.checkpoint;
  const fs::path traj_path = dir / "trajectories.csv";

  const std::string chash = config_hash(cfg);
  const std::string rhash = run_hash(cfg, cohort, seed);
  std::vector<EpisodeLog> history;
  std::optional<TrainingRun> run;
  if (fs::exists(ck_path)) {
    Checkpoint ck = load_checkpoint(ck_path.string());
    if (ck.run_hash == rhash && ck.config_hash == training_hash(cfg)) {
      run.emplace(restore_run(ck, cfg));
      history = std::move(ck.history);
    }
  }
  if (!run) run.emplace(cfg.env, cfg.agent, cfg.trainer, make_cohort(cohort), seed, cfg.harness.master_seed);
  const int resumed_at = run->next_episode();
  truncate_trajectories(traj_path, trajectory_header(chash, rhash), resumed_at);

  auto save = [&] {
    save_checkpoint(capture_checkpoint(*run, cfg, history), ck_path.string());
    write_file(out_dir / rec.training_log, training_log_csv(history, chash, rhash));
  };

  rec.status = "complete";
  try {
    std::ofstream traj(traj_path, std::ios::binary | std::ios::app);
    while (!run->done()) {
      EpisodeLog log = run->train_episode(true);
      append_trajectory(traj, log);
      log.trajectory.clear();
      history.push_back(std::move(log));
      const int every = cfg.harness.checkpoint_every;
      if (every > 0 && run->next_episode() % every == 0 && !run->done()) {
        traj.flush();
        save();
      }
    }
    traj.flush();
    save();
  } catch (const TrainingAborted& e) {
    rec.status = "aborted";
    rec.aborted_episode = e.episode;
    rec.message = e.what();
    write_file(out_dir / rec.training_log, training_log_csv(history, chash, rhash));
  }
  rec.episodes = static_cast<int>(history.size());
  if (progress) {
    std::lock_guard<std::mutex> lock(io);
    *progress << "[train] " << cohort << " seed " << seed << ": " << rec.status << " (" << rec.episodes << " episodes";
    if (resumed_at > 0) *progress << ", resumed at " << resumed_at;
    *progress << ")";
    if (!rec.message.empty()) *progress << " " << rec.message;
    *progress << std::endl;
  }
  return rec;
}

json spread_json(const Spread& s) { return json{{"median", s.median}, {"q25", s.q25}, {"q75", s.q75}}; }

json test_json(const RankSumTest& t) { return json{{"u", t.u}, {"p", t.p}, {"exact", t.exact}}; }

}  // namespace

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  int w = workers > 0 ? workers : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  w = std::min(w, n);
  std::atomic<int> next{0};
  std::exception_ptr first;
  std::mutex m;
  auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(m);
        if (!first) first = std::current_exception();
      }
    }
  };
  if (w == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int i = 0; i < w; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (first) std::rethrow_exception(first);
}

bool TrainResult::aborted() const {
  return std::any_of(runs.begin(), runs.end(), [](const RunRecord& r) { return r.status == "aborted"; });
}

bool TrainResult::failed() const {
  return std::any_of(runs.begin(), runs.end(), [](const RunRecord& r) { return r.status == "failed"; });
}

std::string run_directory(const std::string& cohort, int seed) {
  return (fs::path("runs") / cohort / ("seed_" + std::to_string(seed))).string();
}

std::string training_log_csv(const std::vector<EpisodeLog>& logs, const std::string& config_hash,
                             const std::string& run_hash) {
  std::ostringstream out;
  out << hash_header(config_hash) << "# run_hash " << run_hash << "\n";
  out << "episode,warmup,obs_pred,actor,body,conative,total";
  for (int z = 0; z < kNumZones; ++z) out << ",zone_" << z;
  for (Action a : kAllActions) out << ",q_" << action_name(a);
  for (Action a : kAllActions) out << ",pi_" << action_name(a);
  out << ",mean_abs_dg,mean_abs_dz,final_u\n";
  for (const EpisodeLog& l : logs) {
    out << l.episode << ',' << (l.warmup ? 1 : 0) << ',' << num(l.losses.obs_pred) << ',' << num(l.losses.actor) << ','
        << num(l.losses.body) << ',' << num(l.losses.conative) << ',' << num(l.losses.total);
    for (double v : l.occupancy) out << ',' << num(v);
    for (double v : l.mean_q) out << ',' << num(v);
    for (double v : l.mean_pi) out << ',' << num(v);
    out << ',' << num(l.mean_abs_dg) << ',' << num(l.mean_abs_dz) << ',' << num(l.final_u) << '\n';
  }
  return out.str();
}

TrainResult train_cohorts(const RunConfig& cfg, const std::vector<std::string>& cohorts, const std::vector<int>& seeds,
                          const std::string& out_dir, std::ostream* progress) {
  for (const auto& c : cohorts) make_cohort(c);
  const fs::path root(out_dir);
  fs::create_directories(root);
  const std::string started = utc_now();

  struct Task {
    std::string cohort;
    int seed;
  };
  std::vector<Task> tasks;
  for (const auto& c : cohorts)
    for (int s : seeds) tasks.push_back({c, s});

  TrainResult result;
  result.runs.resize(tasks.size());
  std::mutex io;
  parallel_for(static_cast<int>(tasks.size()), cfg.harness.workers, [&](int i) {
    try {
      result.runs[static_cast<std::size_t>(i)] = train_one(cfg, tasks[i].cohort, tasks[i].seed, root, progress, io);
    } catch (const IntegrityError&) {
      throw;
    } catch (const std::exception& e) {
      RunRecord rec;
      rec.cohort = tasks[i].cohort;
      rec.seed = tasks[i].seed;
      rec.status = "failed";
      rec.message = e.what();
      result.runs[static_cast<std::size_t>(i)] = rec;
    }
  });

  // Merge with runs recorded earlier under the same training settings.
  std::vector<RunRecord> merged = result.runs;
  const fs::path manifest_path = root / "manifest.json";
  const std::string thash = training_hash(cfg);
  std::string first_started = started;
  if (fs::exists(manifest_path)) {
    try {
      const json old = json::parse(read_file(manifest_path));
      if (old.value("training_hash", "") == thash) {
        first_started = old.value("started", started);
        for (const json& r : old.at("runs")) {
          RunRecord rec = record_from(r);
          const bool replaced = std::any_of(merged.begin(), merged.end(), [&](const RunRecord& m) {
            return m.cohort == rec.cohort && m.seed == rec.seed;
          });
          if (!replaced) merged.push_back(rec);
        }
      }
    } catch (const json::exception&) {
      // an unreadable manifest is replaced
    }
  }
  std::sort(merged.begin(), merged.end(), record_less);

  RunConfig effective = cfg;
  std::vector<std::string> all_cohorts;
  std::set<int> all_seeds;
  for (const auto& r : merged) {
    if (std::find(all_cohorts.begin(), all_cohorts.end(), r.cohort) == all_cohorts.end()) all_cohorts.push_back(r.cohort);
    all_seeds.insert(r.seed);
  }
  effective.harness.cohorts = all_cohorts;
  effective.harness.seeds.assign(all_seeds.begin(), all_seeds.end());
  const std::string chash = config_hash(effective);
  write_file(root / "effective_config.ini", hash_header(chash) + dump_config(effective));

  json runs = json::array();
  for (const auto& r : merged) runs.push_back(record_json(r));
  json manifest{{"kind", "train"},
                {"code_version", kCodeVersion},
                {"config_hash", chash},
                {"training_hash", thash},
                {"config", "effective_config.ini"},
                {"master_seed", cfg.harness.master_seed},
                {"cohorts", all_cohorts},
                {"seeds", effective.harness.seeds},
                {"started", first_started},
                {"finished", utc_now()},
                {"runs", runs}};
  write_file(manifest_path, manifest.dump(2) + "\n");
  return result;
}

AssayBundle run_assays(const std::string& train_dir, std::ostream* progress, int workers) {
  const fs::path root(train_dir);
  const fs::path manifest_path = root / "manifest.json";
  if (!fs::exists(manifest_path)) throw std::runtime_error("no training manifest in " + train_dir);
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw IntegrityError("training manifest is not valid JSON: " + std::string(e.what()));
  }

  AssayBundle bundle;
  bundle.config = load_config((root / manifest.value("config", "effective_config.ini")).string());
  if (workers >= 0) bundle.config.harness.workers = workers;
  bundle.config_hash = config_hash(bundle.config);
  if (bundle.config_hash != manifest.value("config_hash", ""))
    throw IntegrityError("effective_config.ini does not match the manifest's config hash");
  const RunConfig& cfg = bundle.config;

  std::vector<RunRecord> records;
  for (const json& r : manifest.at("runs")) records.push_back(record_from(r));
  std::set<int> seed_set;
  for (const auto& r : records) seed_set.insert(r.seed);
  const std::vector<int> seeds(seed_set.begin(), seed_set.end());

  std::vector<const RunRecord*> tasks;
  for (auto name : kCohortNames) {
    const std::string cohort(name);
    bool any = false;
    for (int s : seeds) {
      const auto it = std::find_if(records.begin(), records.end(), [&](const RunRecord& r) {
        return r.cohort == cohort && r.seed == s && r.status == "complete";
      });
      if (it == records.end()) {
        if (!any && std::none_of(records.begin(), records.end(), [&](const RunRecord& r) { return r.cohort == cohort; }))
          throw MissingCohortError(cohort, "missing cohort '" + cohort + "': no trained runs in " + train_dir);
        throw MissingCohortError(cohort, "cohort '" + cohort + "' has no complete run for seed " + std::to_string(s) +
                                             " in " + train_dir);
      }
      any = true;
      tasks.push_back(&*it);
    }
  }
  if (seeds.empty()) throw MissingCohortError(std::string(kCohortNames[0]), "no runs listed in " + train_dir);

  const RngStreams streams(cfg.harness.master_seed);
  const GridWorld env(cfg.env);
  const ProbeSet probes = make_probe_set(env, streams.probe(), cfg.assays.probe_count);
  bundle.probe_hash = probes.hash();

  bundle.runs.resize(tasks.size());
  std::mutex io;
  parallel_for(static_cast<int>(tasks.size()), cfg.harness.workers, [&](int i) {
    const RunRecord& rec = *tasks[static_cast<std::size_t>(i)];
    Checkpoint ck = load_checkpoint((root / rec.checkpoint).string());
    if (ck.run_hash != run_hash(cfg, rec.cohort, rec.seed) || ck.cohort != rec.cohort || ck.seed != rec.seed)
      throw IntegrityError("checkpoint " + rec.checkpoint + " does not belong to " + rec.cohort + " seed " +
                           std::to_string(rec.seed));
    TrainingRun run = restore_run(ck, cfg);
    if (probes.hash() != bundle.probe_hash) throw IntegrityError("probe set changed during the assay");
    bundle.runs[static_cast<std::size_t>(i)] =
        assay_run(run, ck.history, probes, streams.stream("assay").substream(static_cast<std::uint64_t>(rec.seed)),
                  cfg.assays);
    if (progress) {
      std::lock_guard<std::mutex> lock(io);
      const AssayRow& row = bundle.runs[static_cast<std::size_t>(i)].row;
      char line[160];
      std::snprintf(line, sizeof line, "[assay] %s seed %d: top-right %.3f, r %.3f, displacement %.4f, spectrum %.4f",
                    rec.cohort.c_str(), rec.seed, row.top_right_occupancy, row.eta_calibration_r,
                    row.pca_displacement, row.spectrum_distance);
      *progress << line << std::endl;
    }
  });

  std::vector<AssayRow> rows;
  for (const auto& r : bundle.runs) rows.push_back(r.row);
  std::vector<std::string> order(kCohortNames.begin(), kCohortNames.end());
  const double expected = cfg.assays.shock_delta * (cfg.assays.shock_end - cfg.assays.shock_start + 1);
  bundle.stats = compute_finding_stats(rows, order, cfg.harness.permutation_draws, streams.stream("permutation"),
                                       expected);
  bundle.findings = evaluate_findings(bundle.stats);
  return bundle;
}

std::string report_csv(const AssayBundle& b) {
  std::ostringstream out;
  out << hash_header(b.config_hash);
  out << "cohort,seed,top_right_occupancy,bottom_occupancy";
  for (Action a : kAllActions) out << ",q_" << action_name(a);
  out << ",eta_calibration_r,calibration_degenerate,pca_displacement,pca_zero_variance,spectrum_distance,"
         "state_distance,shock_magnitude,shock_injected,pre_shock_identical,short_run";
  for (int z = 0; z < kNumZones; ++z) out << ",zone_" << z;
  out << '\n';
  for (const auto& run : b.runs) {
    const AssayRow& r = run.row;
    out << r.cohort << ',' << r.seed << ',' << num(r.top_right_occupancy) << ',' << num(r.bottom_occupancy);
    for (double q : r.q_by_action) out << ',' << num(q);
    out << ',' << num(r.eta_calibration_r) << ',' << (r.calibration_degenerate ? 1 : 0) << ','
        << num(r.pca_displacement) << ',' << (r.pca_zero_variance ? 1 : 0) << ',' << num(r.spectrum_distance) << ','
        << num(r.state_distance) << ',' << num(r.shock_magnitude) << ',' << num(r.shock_injected) << ','
        << (r.pre_shock_identical ? 1 : 0) << ',' << (r.short_run ? 1 : 0);
    for (double z : r.occupancy) out << ',' << num(z);
    out << '\n';
  }
  return out.str();
}

std::string rollouts_csv(const AssayBundle& b) {
  std::ostringstream out;
  out << hash_header(b.config_hash);
  const std::size_t dg = b.config.agent.d_g();
  out << "seed,cohort,condition,t,u,b_tilde,row,col,action,obs_error,body_error";
  for (std::size_t k = 0; k < dg; ++k) out << ",g_" << k;
  out << '\n';
  for (const auto& run : b.runs)
    for (const ShockRollout* r : {&run.control, &run.shock})
      for (const RolloutStep& s : r->steps) {
        out << run.row.seed << ',' << run.row.cohort << ',' << condition_name(r->condition) << ',' << s.t << ','
            << num(s.u) << ',' << num(s.b_tilde) << ',' << s.row << ',' << s.col << ',' << s.action << ','
            << num(s.obs_error) << ',' << num(s.body_error);
        for (std::size_t k = 0; k < dg; ++k) out << ',' << (k < s.g.size() ? num(s.g[k]) : "");
        out << '\n';
      }
  return out.str();
}

std::string calibration_csv(const AssayBundle& b) {
  std::ostringstream out;
  out << hash_header(b.config_hash) << "cohort,seed,index,predicted,oracle\n";
  for (const auto& run : b.runs)
    for (std::size_t i = 0; i < run.calibration.predicted.size(); ++i)
      out << run.row.cohort << ',' << run.row.seed << ',' << i << ',' << num(run.calibration.predicted[i]) << ','
          << num(run.calibration.oracle[i]) << '\n';
  return out.str();
}

std::string summary_json(const AssayBundle& b) {
  json cohorts = json::object();
  for (const CohortStats& c : b.stats.cohorts) {
    json q = json::object();
    for (std::size_t a = 0; a < kNumActions; ++a) q[std::string(action_name(kAllActions[a]))] = spread_json(c.q[a]);
    cohorts[c.name] = json{{"n", c.n},
                           {"top_right_occupancy", spread_json(c.top_right)},
                           {"bottom_occupancy", spread_json(c.bottom)},
                           {"q_up_minus_down", spread_json(c.q_gap)},
                           {"q_by_action", q},
                           {"eta_calibration_r", spread_json(c.calibration_r)},
                           {"pca_displacement", spread_json(c.pca_displacement)},
                           {"spectrum_distance", spread_json(c.spectrum_distance)},
                           {"state_distance", spread_json(c.state_distance)},
                           {"shock_magnitude", spread_json(c.shock_magnitude)}};
  }
  json spectrum = json::object(), displacement = json::object();
  for (const auto& [k, t] : b.stats.spectrum_tests) spectrum[k] = test_json(t);
  for (const auto& [k, t] : b.stats.displacement_tests) displacement[k] = test_json(t);
  json findings = json::array();
  for (const auto& f : b.findings)
    findings.push_back({{"id", f.id}, {"name", f.name}, {"verdict", verdict_name(f.verdict)}, {"detail", f.detail}});
  std::vector<int> seeds;
  for (const auto& r : b.runs)
    if (std::find(seeds.begin(), seeds.end(), r.row.seed) == seeds.end()) seeds.push_back(r.row.seed);
  json doc{{"config_hash", b.config_hash},
           {"code_version", kCodeVersion},
           {"probe_hash", b.probe_hash},
           {"master_seed", b.config.harness.master_seed},
           {"seeds", seeds},
           {"rows", b.runs.size()},
           {"cohorts", cohorts},
           {"rank_sum_tests", {{"spectrum_distance", spectrum}, {"pca_displacement", displacement}}},
           {"residue_correlation",
            {{"spearman_rho", b.stats.residue.rho},
             {"p", b.stats.residue.p},
             {"p_exact", b.stats.residue.exact},
             {"permutation_p", b.stats.residue_permutation_p},
             {"permutation_draws", b.config.harness.permutation_draws},
             {"pairs", b.stats.residue_n}}},
           {"bookkeeping",
            {{"pre_shock_identical", b.stats.pre_shock_identical},
             {"injections_exact", b.stats.injections_exact},
             {"expected_injection", b.stats.expected_injection}}},
           {"findings", findings}};
  return doc.dump(2) + "\n";
}

void write_assay_outputs(const AssayBundle& bundle, const std::string& out_dir) {
  const fs::path root(out_dir);
  const std::string started = utc_now();
  fs::create_directories(root / "figures");
  std::vector<std::string> artifacts{"report.csv", "summary.json", "rollouts.csv", "calibration.csv"};
  write_file(root / "report.csv", report_csv(bundle));
  write_file(root / "summary.json", summary_json(bundle));
  write_file(root / "rollouts.csv", rollouts_csv(bundle));
  write_file(root / "calibration.csv", calibration_csv(bundle));
  for (const auto& [name, svg] : render_figures(bundle)) {
    const std::string rel = (fs::path("figures") / name).string();
    write_file(root / rel, svg);
    artifacts.push_back(rel);
  }
  std::vector<int> seeds;
  for (const auto& r : bundle.runs)
    if (std::find(seeds.begin(), seeds.end(), r.row.seed) == seeds.end()) seeds.push_back(r.row.seed);
  json runs = json::array();
  for (const auto& r : bundle.runs) runs.push_back({{"cohort", r.row.cohort}, {"seed", r.row.seed}, {"status", "assayed"}});
  json manifest{{"kind", "assay"},
                {"code_version", kCodeVersion},
                {"config_hash", bundle.config_hash},
                {"probe_hash", bundle.probe_hash},
                {"seeds", seeds},
                {"cohorts", std::vector<std::string>(kCohortNames.begin(), kCohortNames.end())},
                {"started", started},
                {"finished", utc_now()},
                {"runs", runs},
                {"artifacts", artifacts}};
  write_file(root / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<CriterionResult> structural_checks(const RunConfig& cfg, const std::string& train_dir) {
  std::vector<CriterionResult> out;

  {
    const auto t0 = std::chrono::steady_clock::now();
    const auto grads = gradient_check_suite(100);
    const auto invariants = numeric_invariant_suite(100);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    double worst = 0.0;
    std::string worst_op, failures;
    for (const auto& g : grads) {
      if (g.max_error >= worst) {
        worst = g.max_error;
        worst_op = g.op;
      }
      if (!(g.max_error <= 1e-4)) failures += " " + g.op;
    }
    for (const auto& inv : invariants)
      if (!inv.ok()) failures += " [" + inv.name + " " + num(inv.worst) + "]";
    const bool ok = failures.empty() && secs < 60.0;
    out.push_back({1, "Numerical core", ok ? Verdict::Pass : Verdict::Fail,
                   std::to_string(grads.size()) + " operations x 100 instances, worst relative error " + num(worst) +
                       " (" + worst_op + "); " + std::to_string(invariants.size()) + " invariant families; " +
                       num(std::round(secs * 100) / 100) + " s" + (failures.empty() ? "" : "; failing:" + failures)});
  }

  {
    const GridWorld env{GridConfig{}};
    const GridConfig& c = env.config();
    auto logistic = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    auto a_direct = [&](int row) { return logistic(c.affordance_slope * (7 - row) * (3.0 / 7.0)) - 0.5; };
    auto eq8 = [&](double u, bool moved, int row) {
      return c.rho_aff * u - c.c_met - (moved ? c.c_move : 0.0) + c.lambda_aff * a_direct(row);
    };
    double worst = 0.0;
    worst = std::max(worst, std::abs(env.step_body(0.0, false, 7, 7) - (-0.002)));
    worst = std::max(worst, std::abs(env.step_body(0.0, true, 7, 7) - (-0.003)));
    RngStream fuzz = RngStreams(cfg.harness.master_seed).stream("env-oracle");
    for (int i = 0; i < 1000; ++i) {
      const double u = fuzz.uniform(-5.0, 5.0);
      const bool moved = fuzz.uniform() < 0.5;
      const int row = static_cast<int>(fuzz.next_bits() % 15), col = static_cast<int>(fuzz.next_bits() % 15);
      worst = std::max(worst, std::abs(env.step_body(u, moved, row, col) - eq8(u, moved, row)));
    }
    EnvState s = env.initial_state(RngStream(1));
    s.row = 7, s.col = 7, s.u = 0.0;
    env.step(s, Action::Stay);
    worst = std::max(worst, std::abs(s.u - (-0.002)));
    s = env.initial_state(RngStream(1));
    s.row = 7, s.col = 7, s.u = 0.0;
    const StepOutcome up = env.step(s, Action::Up);
    worst = std::max(worst, std::abs(s.u - eq8(0.0, true, 6)));
    const bool steps_ok = up.moved && s.row == 6 && worst <= 1e-12;

    const double u_star = (-c.c_met + c.lambda_aff * a_direct(0)) / (1.0 - c.rho_aff);
    EnvState top = env.initial_state(RngStream(2));
    top.row = 0, top.col = 7, top.u = 0.0;
    bool monotone = true;
    for (int t = 0; t < 2000; ++t) {
      const double before = top.u;
      env.step(top, Action::Stay);
      monotone = monotone && top.u >= before && top.u <= u_star + 1e-12;
    }
    const double fp_err = std::abs(top.u - u_star);

    auto mc_std = [&](int col) {
      EnvState probe = env.initial_state(RngStreams(cfg.harness.master_seed).stream("env-noise-oracle").substream(col));
      probe.row = 7, probe.col = col;
      double sum = 0.0, sq = 0.0;
      const int n = 100000;
      for (int t = 0; t < n; ++t) {
        probe.t = t;
        const double e = env.observe(probe).x[1] - env.texture(6, col);
        sum += e;
        sq += e * e;
      }
      const double mean = sum / n;
      return std::sqrt(sq / n - mean * mean);
    };
    const double sd0 = mc_std(0), sd14 = mc_std(14);
    const bool ok = steps_ok && fp_err <= 1e-3 && monotone && sd0 >= 0.36 && sd0 <= 0.44 && sd14 >= 0.045 &&
                    sd14 <= 0.055;
    out.push_back({2, "Environment oracles", ok ? Verdict::Pass : Verdict::Fail,
                   "step-rule max deviation " + num(worst) + "; u* " + num(u_star) + ", |u(2000) - u*| " +
                       num(fp_err) + (monotone ? ", monotone" : ", NOT monotone") + "; noise std col 0 " + num(sd0) +
                       ", col 14 " + num(sd14)});
  }

  {
    std::optional<TrainingRun> run;
    std::string source = "fresh full-cohort run";
    const fs::path manifest_path = fs::path(train_dir) / "manifest.json";
    if (!train_dir.empty() && fs::exists(manifest_path)) {
      const json manifest = json::parse(read_file(manifest_path));
      const RunConfig stored = load_config((fs::path(train_dir) / manifest.value("config", "effective_config.ini")).string());
      for (const json& r : manifest.at("runs")) {
        const RunRecord rec = record_from(r);
        if (rec.status != "complete" || rec.cohort != "full") continue;
        run.emplace(restore_run(load_checkpoint((fs::path(train_dir) / rec.checkpoint).string()), stored));
        source = "trained full seed " + std::to_string(rec.seed);
        break;
      }
    }
    if (!run) run.emplace(cfg.env, cfg.agent, cfg.trainer, make_cohort("full"), 0, cfg.harness.master_seed);
    const FirewallMatrix got = gradient_presence(*run);
    const FirewallMatrix want = expected_wiring();
    std::string mismatches;
    for (const auto& [loss, groups] : want)
      for (const auto& [group, expected] : groups) {
        const auto li = got.find(loss);
        const bool present = li != got.end() && li->second.count(group) && li->second.at(group);
        if (present != expected)
          mismatches += " " + loss + "->" + group + (present ? " (unexpected gradient)" : " (missing gradient)");
      }
    out.push_back({3, "Gradient firewall", mismatches.empty() ? Verdict::Pass : Verdict::Fail,
                   "live episode batch on " + source + "; " +
                       (mismatches.empty() ? std::string("presence matrix matches the wiring table")
                                           : "mismatches:" + mismatches)});
  }
  return out;
}

namespace {

/// Train then assay; the bundle is empty when training did not complete.
std::optional<AssayBundle> train_and_assay(const RunConfig& cfg, const fs::path& out, std::ostream* progress,
                                           TrainResult& training) {
  training = train_cohorts(cfg, cfg.harness.cohorts, cfg.harness.seeds, (out / "train").string(), progress);
  if (training.aborted() || training.failed()) return std::nullopt;
  AssayBundle bundle = run_assays((out / "train").string(), progress, cfg.harness.workers);
  write_assay_outputs(bundle, (out / "assay").string());
  return bundle;
}

}  // namespace

ReplicateOutcome replicate(const RunConfig& cfg, const std::string& out, bool repeat, std::ostream* progress) {
  ReplicateOutcome o;
  const fs::path root(out);
  const auto first = train_and_assay(cfg, root, progress, o.training);
  if (!first) return o;
  o.criteria = structural_checks(cfg, (root / "train").string());
  o.criteria.insert(o.criteria.end(), first->findings.begin(), first->findings.end());

  CriterionResult repro{10, "Reproducibility", Verdict::Skipped, "not requested; run the pipeline twice to check"};
  if (repeat) {
    const fs::path second_dir = root / "repeat";
    fs::remove_all(second_dir);
    if (progress) *progress << "second pass into " << second_dir.string() << "\n";
    if (!train_and_assay(cfg, second_dir, nullptr, o.repeat_training)) return o;
    std::string differing;
    for (const char* name : {"report.csv", "summary.json"}) {
      const std::string a = read_file(root / "assay" / name), b = read_file(second_dir / "assay" / name);
      if (a.empty() || a != b) differing += std::string(" ") + name;
    }
    repro.verdict = differing.empty() ? Verdict::Pass : Verdict::Fail;
    repro.detail = differing.empty() ? "report.csv and summary.json byte-identical across two executions"
                                     : "differing:" + differing;
  }
  o.criteria.push_back(repro);
  return o;
}

}  // namespace soma
