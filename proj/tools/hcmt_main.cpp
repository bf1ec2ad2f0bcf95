// Command-line entry points: train, evaluate, ablate, synth-data.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 aborted on a
// non-finite loss, 1 anything else.

#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "hcmt/errors.hpp"
#include "hcmt/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

class RunLog {
 public:
  void open(const fs::path& path) { file_.open(path, std::ios::app); }
  void line(const std::string& msg) {
    std::cout << msg << std::endl;
    if (file_) file_ << msg << "\n" << std::flush;
  }

 private:
  std::ofstream file_;
};

std::string fmt_metric(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

// HCMT_RUN_ROOT reroots relative output directories.
fs::path resolve_out_dir(const std::string& out) {
  fs::path p(out);
  if (p.is_relative()) {
    if (const char* root = std::getenv("HCMT_RUN_ROOT")) return fs::path(root) / p;
  }
  return p;
}

hcmt::ConfigStore load_config(const std::string& config_path,
                              const std::vector<std::string>& overrides) {
  hcmt::ConfigStore store;
  if (!config_path.empty()) store.merge_file(config_path);
  for (const auto& kv : overrides) store.apply_override(kv);
  return store;
}

struct CaseTable {
  std::vector<hcmt::CaseScore> scores;
  hcmt::MeanScore mean;
};

void write_case_csvs(const fs::path& dir, const CaseTable& table,
                     const std::vector<std::string>& metric_columns, bool propagate_undefined) {
  const bool want_dice = std::count(metric_columns.begin(), metric_columns.end(), "dice") > 0;
  const bool want_jac = std::count(metric_columns.begin(), metric_columns.end(), "jaccard") > 0;
  const bool want_asd = std::count(metric_columns.begin(), metric_columns.end(), "asd") > 0;
  const bool want_hd = std::count(metric_columns.begin(), metric_columns.end(), "hd95") > 0;

  std::ofstream per(dir / "per_case.csv");
  per << "case_id";
  if (want_dice) per << ",dice";
  if (want_jac) per << ",jaccard";
  if (want_asd) per << ",asd";
  if (want_hd) per << ",hd95";
  per << ",distances_defined\n";
  for (const auto& s : table.scores) {
    per << s.case_id;
    if (want_dice) per << "," << fmt_metric(s.dice);
    if (want_jac) per << "," << fmt_metric(s.jaccard);
    if (want_asd) per << "," << fmt_metric(s.asd);
    if (want_hd) per << "," << fmt_metric(s.hd95);
    per << "," << (s.distances_defined ? 1 : 0) << "\n";
  }

  const bool any_undefined = table.mean.distance_cases != table.mean.cases;
  const double asd = propagate_undefined && any_undefined
                         ? std::numeric_limits<double>::quiet_NaN()
                         : table.mean.asd;
  const double hd = propagate_undefined && any_undefined
                        ? std::numeric_limits<double>::quiet_NaN()
                        : table.mean.hd95;
  std::ofstream mean(dir / "mean.csv");
  mean << "cases";
  if (want_dice) mean << ",dice";
  if (want_jac) mean << ",jaccard";
  if (want_asd) mean << ",asd";
  if (want_hd) mean << ",hd95";
  mean << ",distance_cases\n" << table.mean.cases;
  if (want_dice) mean << "," << fmt_metric(table.mean.dice);
  if (want_jac) mean << "," << fmt_metric(table.mean.jaccard);
  if (want_asd) mean << "," << fmt_metric(asd);
  if (want_hd) mean << "," << fmt_metric(hd);
  mean << "," << table.mean.distance_cases << "\n";
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& out, bool resume) {
  hcmt::TrainConfig cfg = hcmt::TrainConfig::resolve(load_config(config_path, overrides));

  // Build the dataset before creating the run directory: a data failure must
  // not leave a partial run dir behind.
  hcmt::Dataset dataset = hcmt::build_dataset(cfg);

  const fs::path run_dir = resolve_out_dir(out);
  const fs::path ckpt_dir = run_dir / "checkpoints";
  if (!resume && fs::exists(run_dir / "config.resolved.cfg"))
    throw hcmt::ConfigError("run directory already holds a run: " + run_dir.string() +
                            " (use --resume to continue it)");
  fs::create_directories(ckpt_dir);

  RunLog log;
  log.open(run_dir / "log.txt");

  {
    std::ofstream snap(run_dir / "config.resolved.cfg");
    snap << cfg.to_store().serialize();
    if (!snap) throw hcmt::IoError("cannot write config snapshot under " + run_dir.string());
  }

  hcmt::Trainer trainer(cfg, dataset);
  if (resume) {
    fs::path latest;
    std::int64_t best_t = -1;
    if (fs::is_directory(ckpt_dir))
      for (const auto& entry : fs::directory_iterator(ckpt_dir)) {
        if (entry.path().extension() != ".hcmt") continue;
        const auto ckpt = hcmt::load_checkpoint(entry.path());
        if (ckpt.iteration > best_t) {
          best_t = ckpt.iteration;
          latest = entry.path();
        }
      }
    if (best_t < 0)
      throw hcmt::ConfigError("--resume: no checkpoint found under " + ckpt_dir.string());
    trainer.restore(hcmt::load_checkpoint(latest));
    log.line("resumed from " + latest.string() + " at iteration " + std::to_string(best_t));
  }

  log.line("training mode=" + cfg.mode + " use_HS=" + (cfg.use_HS ? "1" : "0") + " use_HU=" +
           (cfg.use_HU ? "1" : "0") + " use_teacher=" + (cfg.use_teacher ? "1" : "0") +
           " iterations=" + std::to_string(cfg.total_iterations));
  log.line("data: labeled=" + std::to_string(dataset.labeled.size()) + " unlabeled=" +
           std::to_string(dataset.unlabeled.size()) + " test=" +
           std::to_string(dataset.test.size()));

  std::string final_ckpt;
  auto sink = [&](const hcmt::Checkpoint& ckpt, std::int64_t t, bool is_final) {
    char name[64];
    if (is_final)
      std::snprintf(name, sizeof(name), "ckpt_final.hcmt");
    else
      std::snprintf(name, sizeof(name), "ckpt_%06lld.hcmt", static_cast<long long>(t));
    const fs::path path = ckpt_dir / name;
    hcmt::save_checkpoint(path, ckpt);
    if (is_final) final_ckpt = path.string();
    log.line("checkpoint " + path.string());
  };

  hcmt::TrainReport report;
  try {
    report = trainer.run(sink);
  } catch (const hcmt::NumericError& e) {
    hcmt::write_report_csv(run_dir / "report.csv", trainer.report());
    json diag = {{"aborted", true},
                 {"reason", e.what()},
                 {"iteration", trainer.iteration()},
                 {"records", trainer.report().records.size()}};
    std::ofstream(run_dir / "summary.json") << diag.dump(2) << "\n";
    log.line(std::string("ABORT: ") + e.what());
    return kExitNumeric;
  }

  hcmt::write_report_csv(run_dir / "report.csv", report);
  const auto& last = report.records.back();
  json summary = {{"iterations", report.records.size()},
                  {"wall_seconds", report.wall_seconds},
                  {"final_checkpoint", final_ckpt},
                  {"mode", cfg.mode},
                  {"use_HS", cfg.use_HS},
                  {"use_HU", cfg.use_HU},
                  {"use_teacher", cfg.use_teacher},
                  {"final_loss_sup", last.loss_sup},
                  {"final_loss_unsup", last.loss_unsup},
                  {"final_loss_total", last.loss_total}};
  std::ofstream(run_dir / "summary.json") << summary.dump(2) << "\n";
  log.line("done: " + std::to_string(report.records.size()) + " iterations in " +
           fmt_metric(report.wall_seconds) + "s, final total loss " +
           fmt_metric(last.loss_total));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

int cmd_evaluate(const std::string& checkpoint_path, const std::string& config_path,
                 const std::vector<std::string>& overrides, const std::string& out,
                 const std::string& partition, const std::string& metrics_arg, bool use_teacher,
                 const std::string& undefined_policy) {
  const hcmt::Checkpoint ckpt = hcmt::load_checkpoint(checkpoint_path);

  // Config priority: explicit file > checkpoint-embedded snapshot.
  hcmt::ConfigStore store;
  if (!config_path.empty()) {
    store.merge_file(config_path);
  } else if (ckpt.extra.contains("config_text")) {
    const fs::path tmp =
        fs::temp_directory_path() / ("hcmt_eval_cfg_" + std::to_string(::getpid()) + ".cfg");
    std::ofstream(tmp) << ckpt.extra["config_text"].get<std::string>();
    store.merge_file(tmp);
    fs::remove(tmp);
  } else {
    throw hcmt::ConfigError("checkpoint has no embedded config; pass --config");
  }
  for (const auto& kv : overrides) store.apply_override(kv);
  hcmt::TrainConfig cfg = hcmt::TrainConfig::resolve(store);

  if (!(cfg.network == ckpt.spec))
    throw hcmt::ConfigError("checkpoint network spec does not match the evaluation config");

  std::vector<std::string> metric_columns;
  {
    std::istringstream is(metrics_arg);
    std::string m;
    while (std::getline(is, m, ',')) {
      if (m != "dice" && m != "jaccard" && m != "asd" && m != "hd95")
        throw hcmt::ConfigError("unknown metric '" + m + "' (dice|jaccard|asd|hd95)");
      metric_columns.push_back(m);
    }
  }
  if (undefined_policy != "exclude" && undefined_policy != "propagate")
    throw hcmt::ConfigError("--undefined-policy must be exclude or propagate");

  hcmt::Dataset dataset = hcmt::build_dataset(cfg);
  const std::vector<hcmt::TrainItem>* cases = nullptr;
  if (partition == "test")
    cases = &dataset.test;
  else if (partition == "labeled")
    cases = &dataset.labeled;
  else
    throw hcmt::ConfigError("--partition must be test or labeled");
  if (cases->empty()) throw hcmt::DataError("partition '" + partition + "' has no cases");

  auto net = std::make_unique<hcmt::VNet>(ckpt.spec);
  const std::string prefix = use_teacher ? "teacher" : "student";
  if (use_teacher && !ckpt.has("teacher/" + net->params().front().name))
    throw hcmt::ConfigError("checkpoint holds no teacher parameters");
  hcmt::load_params_from_checkpoint(ckpt, prefix, *net);

  const fs::path out_dir = resolve_out_dir(out);
  fs::create_directories(out_dir);
  RunLog log;
  log.open(out_dir / "log.txt");
  log.line("evaluating " + std::to_string(cases->size()) + " " + partition + " cases with " +
           prefix + " parameters");

  CaseTable table;
  table.scores = hcmt::evaluate_cases(*net, *cases, cfg.patch, cfg.effective_eval_stride());
  table.mean = hcmt::mean_scores(table.scores);
  write_case_csvs(out_dir, table, metric_columns, undefined_policy == "propagate");

  std::ostringstream row;
  row << "mean:";
  for (const auto& m : metric_columns) {
    row << " " << m << "=";
    if (m == "dice") row << fmt_metric(table.mean.dice);
    if (m == "jaccard") row << fmt_metric(table.mean.jaccard);
    if (m == "asd") row << fmt_metric(table.mean.asd);
    if (m == "hd95") row << fmt_metric(table.mean.hd95);
  }
  row << " (" << table.mean.distance_cases << "/" << table.mean.cases
      << " cases with defined distances)";
  log.line(row.str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& overrides,
               const std::string& modes_arg, int seeds, int jobs, const std::string& out) {
  std::vector<std::string> modes;
  {
    std::istringstream is(modes_arg);
    std::string m;
    while (std::getline(is, m, ',')) modes.push_back(m);
  }
  if (modes.empty()) throw hcmt::ConfigError("--modes must list at least one mode");
  for (const auto& m : modes) {
    bool known = false;
    for (const auto& k : hcmt::known_modes()) known |= k == m;
    if (!known) throw hcmt::ConfigError("unknown mode '" + m + "'");
  }
  if (seeds < 1) throw hcmt::ConfigError("--seeds must be >= 1");
  if (jobs < 1) throw hcmt::ConfigError("--jobs must be >= 1");

  const hcmt::ConfigStore base = load_config(config_path, overrides);
  const hcmt::TrainConfig base_cfg = hcmt::TrainConfig::resolve(base);  // early validation
  const std::uint64_t base_seed = base_cfg.seed;

  const fs::path out_dir = resolve_out_dir(out);
  fs::create_directories(out_dir);
  RunLog log;
  log.open(out_dir / "log.txt");

  struct Job {
    std::string mode;
    int seed_index;
    fs::path run_dir;
    hcmt::TrainConfig cfg;
  };
  std::vector<Job> jobs_list;
  for (const auto& mode : modes)
    for (int si = 0; si < seeds; ++si) {
      hcmt::ConfigStore store = base;
      store.set("mode", mode);
      // The backbone seed is shared across modes within one replicate so that
      // mode differences isolate the HS/HU/teacher components.
      store.set("seed", std::to_string(base_seed + static_cast<std::uint64_t>(si)));
      Job job;
      job.mode = mode;
      job.seed_index = si;
      job.run_dir = out_dir / (mode + "_seed" + std::to_string(si));
      job.cfg = hcmt::TrainConfig::resolve(store);
      jobs_list.push_back(std::move(job));
    }

  auto run_job_inprocess = [&](const Job& job) {
    hcmt::Dataset data = hcmt::build_dataset(job.cfg);
    fs::create_directories(job.run_dir / "checkpoints");
    std::ofstream(job.run_dir / "config.resolved.cfg") << job.cfg.to_store().serialize();
    hcmt::Trainer trainer(job.cfg, data);
    auto report = trainer.run([&](const hcmt::Checkpoint& c, std::int64_t, bool is_final) {
      if (!is_final) return;  // ablation keeps only final checkpoints
      hcmt::save_checkpoint(job.run_dir / "checkpoints" / "ckpt_final.hcmt", c);
    });
    hcmt::write_report_csv(job.run_dir / "report.csv", report);
  };

  if (jobs == 1) {
    for (const auto& job : jobs_list) {
      log.line("training " + job.mode + " (seed " + std::to_string(job.seed_index) + ")");
      run_job_inprocess(job);
    }
  } else {
    // process-parallel: each job re-invokes this binary's train command
    char exe[4096];
    const ssize_t n = ::readlink("/proc/self/exe", exe, sizeof(exe) - 1);
    if (n <= 0) throw hcmt::IoError("cannot resolve own executable path");
    exe[n] = '\0';
    std::size_t next = 0;
    std::vector<std::pair<pid_t, std::size_t>> active;
    auto launch = [&](std::size_t idx) {
      const Job& job = jobs_list[idx];
      const fs::path cfg_file =
          out_dir / (job.mode + "_seed" + std::to_string(job.seed_index) + ".job.cfg");
      std::ofstream(cfg_file) << job.cfg.to_store().serialize();
      log.line("spawning " + job.mode + " (seed " + std::to_string(job.seed_index) + ")");
      const pid_t pid = ::fork();
      if (pid < 0) throw hcmt::IoError("fork failed");
      if (pid == 0) {
        ::execl(exe, exe, "train", "--config", cfg_file.c_str(), "--out", job.run_dir.c_str(),
                static_cast<char*>(nullptr));
        _exit(127);
      }
      active.emplace_back(pid, idx);
    };
    while (next < jobs_list.size() || !active.empty()) {
      while (next < jobs_list.size() && static_cast<int>(active.size()) < jobs) launch(next++);
      int status = 0;
      const pid_t done = ::waitpid(-1, &status, 0);
      for (auto it = active.begin(); it != active.end(); ++it)
        if (it->first == done) {
          const Job& job = jobs_list[it->second];
          if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
            throw hcmt::DataError("ablation job " + job.mode + "_seed" +
                                  std::to_string(job.seed_index) + " failed");
          active.erase(it);
          break;
        }
    }
  }

  // Evaluate every run on its replicate's test split.
  std::ofstream per_seed(out_dir / "ablation_per_seed.csv");
  per_seed << "mode,seed,L,U,dice,jaccard,asd,hd95\n";
  std::map<std::string, std::vector<hcmt::MeanScore>> by_mode;
  for (const auto& job : jobs_list) {
    hcmt::Dataset data = hcmt::build_dataset(job.cfg);
    const auto ckpt = hcmt::load_checkpoint(job.run_dir / "checkpoints" / "ckpt_final.hcmt");
    hcmt::VNet net(ckpt.spec);
    hcmt::load_params_from_checkpoint(ckpt, "student", net);
    auto scores =
        hcmt::evaluate_cases(net, data.test, job.cfg.patch, job.cfg.effective_eval_stride());
    const auto mean = hcmt::mean_scores(scores);
    by_mode[job.mode].push_back(mean);
    per_seed << job.mode << "," << job.seed_index << "," << data.labeled.size() << ","
             << (job.cfg.use_teacher ? data.unlabeled.size() : 0) << "," << fmt_metric(mean.dice)
             << "," << fmt_metric(mean.jaccard) << "," << fmt_metric(mean.asd) << ","
             << fmt_metric(mean.hd95) << "\n";
    log.line(job.mode + " seed " + std::to_string(job.seed_index) + ": dice " +
             fmt_metric(mean.dice));
  }

  std::ofstream table(out_dir / "ablation.csv");
  table << "mode,L,U,dice,jaccard,asd,hd95,seeds\n";
  for (const auto& mode : modes) {
    const auto& runs = by_mode[mode];
    double dice = 0, jac = 0, asd = 0, hd = 0;
    for (const auto& m : runs) {
      dice += m.dice;
      jac += m.jaccard;
      asd += m.asd;
      hd += m.hd95;
    }
    const double n = static_cast<double>(runs.size());
    hcmt::ConfigStore store = base;
    store.set("mode", mode);
    const hcmt::TrainConfig mode_cfg = hcmt::TrainConfig::resolve(store);
    const int L = mode_cfg.data.labeled;
    const int U = mode_cfg.use_teacher
                      ? (mode_cfg.data.synthetic ? mode_cfg.data.synthetic_count - L : -1)
                      : 0;
    table << mode << "," << L << "," << U << "," << fmt_metric(dice / n) << ","
          << fmt_metric(jac / n) << "," << fmt_metric(asd / n) << "," << fmt_metric(hd / n) << ","
          << runs.size() << "\n";
    log.line(mode + ": mean dice " + fmt_metric(dice / n) + " over " +
             std::to_string(runs.size()) + " seed(s)");
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// synth-data

int cmd_synth_data(int count, int test_count, int labeled, std::int64_t grid, std::uint64_t seed,
                   const std::string& format, double noise, double bias, double contrast,
                   const std::string& out) {
  if (labeled > count) throw hcmt::ConfigError("--labeled exceeds --count");
  hcmt::SyntheticParams params;
  params.noise_sigma = noise;
  params.bias_amplitude = bias;
  params.contrast = contrast;
  if (format != "nii.gz" && format != "nii" && format != "nrrd" && format != "rawvol")
    throw hcmt::ConfigError("--format must be nii.gz, nii, nrrd or rawvol");

  auto samples = hcmt::generate_synthetic(count + test_count, grid, seed, params);

  const fs::path out_dir = resolve_out_dir(out);
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "labels");
  std::vector<std::string> ids;
  for (auto& [vol, mask] : samples) {
    const std::string fname = vol.id + "." + format;
    hcmt::save_volume(out_dir / "images" / fname, vol);
    hcmt::save_mask(out_dir / "labels" / fname, mask);
    ids.push_back(vol.id);
  }

  hcmt::DatasetSplit split;
  split.seed = seed;
  for (int i = 0; i < count; ++i)
    (i < labeled ? split.labeled : split.unlabeled).push_back(ids[static_cast<std::size_t>(i)]);
  for (int i = count; i < count + test_count; ++i)
    split.test.push_back(ids[static_cast<std::size_t>(i)]);
  hcmt::save_split(out_dir / "split.txt", split);

  json meta = {{"count", count},         {"test", test_count},    {"labeled", labeled},
               {"grid", grid},           {"seed", seed},          {"noise_sigma", noise},
               {"bias_amplitude", bias}, {"contrast", contrast},  {"format", format}};
  std::ofstream(out_dir / "meta.json") << meta.dump(2) << "\n";
  std::cout << "wrote " << samples.size() << " cases under " << out_dir.string() << std::endl;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical consistency mean teacher for 3D segmentation"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train a model into a run directory");
  std::string train_config, train_out;
  std::vector<std::string> train_sets;
  bool train_resume = false;
  train->add_option("--config", train_config, "config file (flat dotted keys)");
  train->add_option("--set", train_sets, "override key=value (repeatable)");
  train->add_option("--out", train_out, "run directory")->required();
  train->add_flag("--resume", train_resume, "resume from the latest checkpoint in --out");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a dataset partition");
  std::string eval_ckpt, eval_config, eval_out, eval_partition = "test";
  std::string eval_metrics = "dice,jaccard,asd,hd95", eval_undef = "exclude";
  std::vector<std::string> eval_sets;
  bool eval_teacher = false;
  evaluate->add_option("--checkpoint", eval_ckpt, "checkpoint archive")->required();
  evaluate->add_option("--config", eval_config,
                       "config file (defaults to the checkpoint-embedded snapshot)");
  evaluate->add_option("--set", eval_sets, "override key=value (repeatable)");
  evaluate->add_option("--out", eval_out, "output directory")->required();
  evaluate->add_option("--partition", eval_partition, "test|labeled (default test)");
  evaluate->add_option("--metrics", eval_metrics, "comma list of dice,jaccard,asd,hd95");
  evaluate->add_flag("--use-teacher", eval_teacher, "evaluate the teacher parameters");
  evaluate->add_option("--undefined-policy", eval_undef,
                       "exclude|propagate undefined distances in the mean (default exclude)");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "train and compare component modes");
  std::string ab_config, ab_out, ab_modes = "vnet,vnet_hs,mt,mt_hu,mt_hs,mt_hu_hs";
  std::vector<std::string> ab_sets;
  int ab_seeds = 1, ab_jobs = 1;
  ablate->add_option("--config", ab_config, "base config file");
  ablate->add_option("--set", ab_sets, "override key=value (repeatable)");
  ablate->add_option("--modes", ab_modes, "comma list of modes (default: all six)");
  ablate->add_option("--seeds", ab_seeds, "replicates per mode (default 1)");
  ablate->add_option("--jobs", ab_jobs, "parallel training processes (default 1)");
  ablate->add_option("--out", ab_out, "output directory")->required();

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "generate a synthetic dataset on disk");
  int sd_count = 40, sd_test = 20, sd_labeled = 8;
  std::int64_t sd_grid = 64;
  std::uint64_t sd_seed = 1337;
  std::string sd_format = "nii.gz", sd_out;
  double sd_noise = 0.35, sd_bias = 0.3, sd_contrast = 1.0;
  synth->add_option("--count", sd_count, "training volumes (default 40)");
  synth->add_option("--test", sd_test, "test volumes (default 20)");
  synth->add_option("--labeled", sd_labeled, "labeled subset of --count (default 8)");
  synth->add_option("--grid", sd_grid, "cubic grid size (default 64)");
  synth->add_option("--seed", sd_seed, "generator seed");
  synth->add_option("--format", sd_format, "nii.gz|nii|nrrd|rawvol (default nii.gz)");
  synth->add_option("--noise", sd_noise, "observation noise sigma");
  synth->add_option("--bias", sd_bias, "bias field amplitude");
  synth->add_option("--contrast", sd_contrast, "foreground contrast");
  synth->add_option("--out", sd_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_config, train_sets, train_out, train_resume);
    if (*evaluate)
      return cmd_evaluate(eval_ckpt, eval_config, eval_sets, eval_out, eval_partition,
                          eval_metrics, eval_teacher, eval_undef);
    if (*ablate) return cmd_ablate(ab_config, ab_sets, ab_modes, ab_seeds, ab_jobs, ab_out);
    if (*synth)
      return cmd_synth_data(sd_count, sd_test, sd_labeled, sd_grid, sd_seed, sd_format, sd_noise,
                            sd_bias, sd_contrast, sd_out);
  } catch (const hcmt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return kExitConfig;
  } catch (const hcmt::DataError& e) {
    std::cerr << "data error: " << e.what() << std::endl;
    return kExitData;
  } catch (const hcmt::NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << std::endl;
    return kExitNumeric;
  } catch (const hcmt::IoError& e) {
    std::cerr << "io error: " << e.what() << std::endl;
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitError;
  }
  return kExitError;
}
