// End-to-end checks of the hcmt binary: run directories, exit codes,
// determinism of re-execution, and the ablation table. The binary path comes
// in through HCMT_BIN (set by CMake).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hcmt/data.hpp"
#include "hcmt/trainer.hpp"

using namespace hcmt;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("hcmt_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run(const std::string& args) {
  const std::string cmd = std::string(HCMT_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string desk_flags(std::uint64_t seed) {
  std::ostringstream os;
  os << "--set data.synthetic=true --set data.synthetic_count=6 --set data.synthetic_test=2"
     << " --set data.synthetic_grid=16 --set data.labeled=3 --set total_iterations=6"
     << " --set checkpoint_every=3 --set network.base_channels=2"
     << " --set network.encoder_depths=1,1,1 --set network.num_scales=2"
     << " --set scale_weights=0.6,0.4 --set patch=8,8,8 --set seed=" << seed;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("synth-data writes a loadable dataset with a split") {
  TempDir tmp;
  const fs::path ds = tmp.path / "ds";
  REQUIRE(run("synth-data --count 4 --test 2 --labeled 2 --grid 16 --seed 5 --out " +
              ds.string()) == 0);
  CHECK(fs::exists(ds / "split.txt"));
  CHECK(fs::exists(ds / "meta.json"));
  auto split = load_split(ds / "split.txt");
  CHECK(split.labeled.size() == 2);
  CHECK(split.unlabeled.size() == 2);
  CHECK(split.test.size() == 2);
  auto [vol, mask] = load_case(ds / "images" / (split.labeled[0] + ".nii.gz"),
                               ds / "labels" / (split.labeled[0] + ".nii.gz"));
  CHECK(vol.grid.shape() == Shape{16, 16, 16});
  CHECK(mask.labels.shape() == vol.grid.shape());
}

TEST_CASE("train writes a self-contained run directory and is re-executable") {
  TempDir tmp;
  const fs::path run1 = tmp.path / "run1";
  REQUIRE(run("train " + desk_flags(11) + " --out " + run1.string()) == 0);
  CHECK(fs::exists(run1 / "config.resolved.cfg"));
  CHECK(fs::exists(run1 / "report.csv"));
  CHECK(fs::exists(run1 / "summary.json"));
  CHECK(fs::exists(run1 / "log.txt"));
  CHECK(fs::exists(run1 / "checkpoints" / "ckpt_000003.hcmt"));
  CHECK(fs::exists(run1 / "checkpoints" / "ckpt_final.hcmt"));

  // re-executing the snapshot reproduces the report byte for byte
  const fs::path run2 = tmp.path / "run2";
  REQUIRE(run("train --config " + (run1 / "config.resolved.cfg").string() + " --out " +
              run2.string()) == 0);
  CHECK(slurp(run1 / "report.csv") == slurp(run2 / "report.csv"));

  // an existing run directory is refused without --resume
  CHECK(run("train --config " + (run1 / "config.resolved.cfg").string() + " --out " +
            run1.string()) == 2);
}

TEST_CASE("train on real files uses the on-disk dataset layout") {
  TempDir tmp;
  const fs::path ds = tmp.path / "ds";
  REQUIRE(run("synth-data --count 5 --test 2 --labeled 3 --grid 16 --seed 9 --format rawvol"
              " --out " + ds.string()) == 0);
  const fs::path run_dir = tmp.path / "run";
  REQUIRE(run("train --set data.synthetic=false --set data.dir=" + ds.string() +
              " --set total_iterations=3 --set network.base_channels=2"
              " --set network.encoder_depths=1,1,1 --set network.num_scales=2"
              " --set scale_weights=0.6,0.4 --set patch=8,8,8 --out " +
              run_dir.string()) == 0);
  CHECK(fs::exists(run_dir / "report.csv"));
}

TEST_CASE("exit codes: config error 2, data error 3, no partial run dir behind") {
  TempDir tmp;
  const fs::path bad = tmp.path / "bad_run";
  CHECK(run("train --set no_such_key=1 --out " + bad.string()) == 2);
  CHECK(run("train --set total_iterations=0 --out " + bad.string()) == 2);
  CHECK(!fs::exists(bad));

  CHECK(run("train --set data.synthetic=false --set data.dir=" +
            (tmp.path / "missing").string() + " --out " + bad.string()) == 3);
  CHECK(!fs::exists(bad));

  // NaN abort is exit 4 and keeps the partial report for diagnosis
  const fs::path nan_run = tmp.path / "nan_run";
  CHECK(run("train " + desk_flags(7) + " --set initial_lr=1e18 --set total_iterations=30" +
            " --out " + nan_run.string()) == 4);
  CHECK(fs::exists(nan_run / "report.csv"));
  CHECK(slurp(nan_run / "summary.json").find("aborted") != std::string::npos);
}

TEST_CASE("evaluate restricts metric columns and flags undefined distances") {
  TempDir tmp;
  const fs::path run_dir = tmp.path / "run";
  REQUIRE(run("train " + desk_flags(13) + " --out " + run_dir.string()) == 0);
  const std::string ckpt = (run_dir / "checkpoints" / "ckpt_final.hcmt").string();

  const fs::path eval_dir = tmp.path / "eval";
  REQUIRE(run("evaluate --checkpoint " + ckpt + " --out " + eval_dir.string()) == 0);
  const std::string per_case = slurp(eval_dir / "per_case.csv");
  CHECK(per_case.find("case_id,dice,jaccard,asd,hd95,distances_defined") == 0);

  const fs::path narrow = tmp.path / "eval_narrow";
  REQUIRE(run("evaluate --checkpoint " + ckpt + " --metrics dice,jaccard --out " +
              narrow.string()) == 0);
  const std::string mean = slurp(narrow / "mean.csv");
  CHECK(mean.find("cases,dice,jaccard,distance_cases") == 0);
  CHECK(mean.find("asd") == std::string::npos);

  CHECK(run("evaluate --checkpoint " + ckpt + " --metrics bogus --out " +
            (tmp.path / "x").string()) == 2);

  // teacher parameters evaluate too (this run trained with a teacher)
  REQUIRE(run("evaluate --checkpoint " + ckpt + " --use-teacher --out " +
              (tmp.path / "eval_teacher").string()) == 0);

  // checkpoint/config spec mismatch is a config error
  CHECK(run("evaluate --checkpoint " + ckpt + " --set network.base_channels=4 --out " +
            (tmp.path / "y").string()) == 2);
}

TEST_CASE("ablate emits one table row per mode with shared seeds") {
  TempDir tmp;
  const fs::path out = tmp.path / "ablation";
  REQUIRE(run("ablate " + desk_flags(23) + " --modes vnet,mt_hu_hs --seeds 1 --out " +
              out.string()) == 0);
  const std::string table = slurp(out / "ablation.csv");
  CHECK(table.find("mode,L,U,dice,jaccard,asd,hd95,seeds") == 0);
  CHECK(table.find("vnet,3,0,") != std::string::npos);
  CHECK(table.find("mt_hu_hs,3,3,") != std::string::npos);
  CHECK(fs::exists(out / "vnet_seed0" / "report.csv"));
  CHECK(fs::exists(out / "mt_hu_hs_seed0" / "report.csv"));
  CHECK(fs::exists(out / "ablation_per_seed.csv"));

  CHECK(run("ablate " + desk_flags(23) + " --modes nonsense --out " +
            (tmp.path / "z").string()) == 2);
}

TEST_CASE("ablation mode degeneracy: vnet equals flag-disabled mt_hu_hs") {
  TempDir tmp;
  const fs::path a = tmp.path / "a", b = tmp.path / "b";
  REQUIRE(run("train " + desk_flags(31) + " --set mode=vnet --out " + a.string()) == 0);
  REQUIRE(run("train " + desk_flags(31) +
              " --set mode=mt_hu_hs --set use_HU=false --set use_HS=false"
              " --set use_teacher=false --out " +
              b.string()) == 0);
  // identical loss traces (the mode label differs, the trace must not)
  CHECK(slurp(a / "report.csv") == slurp(b / "report.csv"));
}

TEST_CASE("HCMT_RUN_ROOT reroots relative out dirs") {
  TempDir tmp;
  ::setenv("HCMT_RUN_ROOT", tmp.path.c_str(), 1);
  REQUIRE(run("synth-data --count 2 --test 1 --labeled 1 --grid 16 --seed 2 --format rawvol"
              " --out rooted") == 0);
  ::unsetenv("HCMT_RUN_ROOT");
  CHECK(fs::exists(tmp.path / "rooted" / "split.txt"));
}

TEST_CASE("train resumes from the latest checkpoint") {
  TempDir tmp;
  // rampup_iterations is pinned so the lambda schedule does not shift when the
  // interrupted run is extended back to 6 iterations
  const fs::path full = tmp.path / "full", half = tmp.path / "half";
  REQUIRE(run("train " + desk_flags(37) + " --set rampup_iterations=6 --out " + full.string()) ==
          0);
  REQUIRE(run("train " + desk_flags(37) +
              " --set rampup_iterations=6 --set total_iterations=3 --out " +
              half.string()) == 0);
  // turn the half run into a 6-iteration run and resume it
  {
    ConfigStore store = ConfigStore::from_file(half / "config.resolved.cfg");
    store.set("total_iterations", "6");
    std::ofstream out(half / "config.resolved.cfg");
    out << store.serialize();
  }
  REQUIRE(run("train --config " + (half / "config.resolved.cfg").string() +
              " --resume --out " + half.string()) == 0);
  const std::string full_report = slurp(full / "report.csv");
  const std::string resumed_report = slurp(half / "report.csv");
  // the resumed report holds records 3..5; they must match the tail of the
  // uninterrupted run
  std::istringstream fr(full_report);
  std::string line;
  std::vector<std::string> full_rows;
  while (std::getline(fr, line)) full_rows.push_back(line);
  std::istringstream rr(resumed_report);
  std::vector<std::string> res_rows;
  while (std::getline(rr, line)) res_rows.push_back(line);
  REQUIRE(res_rows.size() == 4);   // header + 3 records
  REQUIRE(full_rows.size() == 7);  // header + 6 records
  CHECK(res_rows[1] == full_rows[4]);
  CHECK(res_rows[2] == full_rows[5]);
  CHECK(res_rows[3] == full_rows[6]);
}
