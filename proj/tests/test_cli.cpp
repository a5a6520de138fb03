#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "planeloc/cli.hpp"
#include "planeloc/errors.hpp"

using namespace planeloc;
using namespace planeloc::cli;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  REQUIRE(f.good());
}

std::filesystem::path fresh_dir(const char* leaf) {
  auto dir = std::filesystem::temp_directory_path() / leaf;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

std::string bin() {
  const char* b = std::getenv("PLANELOC_BIN");
  REQUIRE_MESSAGE(b != nullptr, "PLANELOC_BIN must point at the pipeline binary");
  return b;
}

int run(const std::string& cmd) {
  const int st = std::system(cmd.c_str());
  REQUIRE(st != -1);
  REQUIRE(WIFEXITED(st));
  return WEXITSTATUS(st);
}

// small enough to finish in seconds per stage, big enough to exercise every
// artifact hand-off
const char* kTinyCfg =
    "phantom.count = 10\n"
    "phantom.dim = 24\n"
    "phantom.train_frac = 0.6\n"
    "phantom.val_frac = 0.2\n"
    "env.obs = 12\n"
    "net.stem_channels = 2\n"
    "replay.capacity = 2000\n"
    "ddqn.batch = 8\n"
    "ddqn.lr_omega = 1e-3\n"
    "ddqn.target_sync = 50\n"
    "ddqn.grad_steps = 2\n"
    "search.epochs = 2\n"
    "train.epochs = 2\n"
    "collab.hidden = 8\n"
    "collab.layers = 1\n"
    "collab.lr = 1e-3\n"
    "collab.epochs = 1\n"
    "eval.use_collab = 1\n"
    "run.seed = 77\n";

void run_pipeline(const std::string& cfg, const std::string& data, const std::string& out) {
  const std::string base = bin() + " --config " + cfg + " --data " + data + " --out " + out + " ";
  for (const char* cmd : {"phantom-gen", "search", "derive", "train", "train-collab", "eval"}) {
    CAPTURE(cmd);
    CHECK(run(base + cmd + " > /dev/null") == 0);
  }
}

}  // namespace

TEST_CASE("unknown keys and malformed values are rejected") {
  RunConfig cfg;
  CHECK_THROWS_AS(set_key(cfg, "nope.key", "1"), ConfigError);
  CHECK_THROWS_AS(set_key(cfg, "ddqn.batch", "abc"), ConfigError);
  CHECK_THROWS_AS(set_key(cfg, "ddqn.batch", "8x"), ConfigError);
  CHECK_THROWS_AS(set_key(cfg, "collab.joint", "maybe"), ConfigError);
  try {
    set_key(cfg, "ddqn.batch", "abc");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(contains(e.what(), "ddqn.batch"));
    CHECK(contains(e.what(), "abc"));
  }
  CHECK_THROWS_AS(load_config_file(cfg, "/nonexistent/planeloc.cfg"), MissingArtifact);

  const auto dir = fresh_dir("planeloc_cli_badcfg");
  spit((dir / "a.cfg").string(), "ddqn.batch = 8\njust words\n");
  try {
    load_config_file(cfg, (dir / "a.cfg").string());
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(contains(e.what(), ":2"));
  }
}

TEST_CASE("file values load with comments and later overrides win") {
  const auto dir = fresh_dir("planeloc_cli_cfg");
  spit((dir / "a.cfg").string(),
       "# experiment\n"
       "ddqn.batch = 16   # trailing comment\n"
       "\n"
       "run.out = exp1\n"
       "collab.joint = true\n");
  RunConfig cfg;
  load_config_file(cfg, (dir / "a.cfg").string());
  CHECK(cfg.batch == 16);
  CHECK(cfg.out_dir == "exp1");
  CHECK(cfg.collab_joint);
  set_key(cfg, "ddqn.batch", "24");  // flag layer applies after the file
  CHECK(cfg.batch == 24);
}

TEST_CASE("the seed environment variable beats file and flag values") {
  RunConfig cfg;
  cfg.seed = 9;
  REQUIRE(setenv("PLANELOC_SEED", "4242", 1) == 0);
  apply_env_overrides(cfg);
  unsetenv("PLANELOC_SEED");
  CHECK(cfg.seed == 4242);
  apply_env_overrides(cfg);  // unset leaves the value alone
  CHECK(cfg.seed == 4242);
}

TEST_CASE("help text names every key and the echoed config reloads exactly") {
  const std::string help = help_text();
  RunConfig cfg;
  cfg.seed = 123456789012345ull;  // past double's integer range is preserved
  cfg.batch = 16;
  cfg.collab_joint = true;
  RunConfig reloaded;
  for (const auto& [info, value] : config_entries(cfg)) {
    CHECK(contains(help, info.key));
    set_key(reloaded, info.key, value);
  }
  CHECK(contains(help, "PLANELOC_SEED"));
  const auto a = config_entries(cfg);
  const auto b = config_entries(reloaded);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CAPTURE(a[i].first.key);
    CHECK(a[i].second == b[i].second);
  }
}

TEST_CASE("invalid configurations are refused with the offending key named") {
  auto expect_reject = [](void (*tweak)(RunConfig&), const char* needle) {
    RunConfig cfg;
    tweak(cfg);
    try {
      validate_config(cfg);
      FAIL_CHECK("expected ConfigError mentioning " << needle);
    } catch (const ConfigError& e) {
      CHECK(contains(e.what(), needle));
    }
  };
  expect_reject([](RunConfig& c) { c.gamma = 1.0; }, "gamma");
  expect_reject([](RunConfig& c) { c.train_frac = 0.9; c.val_frac = 0.2; }, "split");
  expect_reject([](RunConfig& c) { c.obs = 4; }, "obs");
  expect_reject([](RunConfig& c) { c.eps_lo = 0.5; c.eps_hi = 0.2; }, "exploration");
  expect_reject([](RunConfig& c) { c.out_dir = ""; }, "run.out");
  expect_reject([](RunConfig& c) { c.phantom_dim = 8; }, "phantom.dim");
  CHECK_NOTHROW(validate_config(RunConfig{}));
}

TEST_CASE("unknown commands and missing inputs map to their exit codes") {
  const auto dir = fresh_dir("planeloc_cli_codes");
  RunConfig cfg;
  cfg.out_dir = (dir / "out").string();
  cfg.data_dir = (dir / "data").string();
  CHECK(run_command("bogus", cfg) == 2);
  CHECK(run_command("report", cfg) == 3);  // no volumes.csv yet
}

TEST_CASE("the full pipeline reproduces itself byte for byte") {
  unsetenv("PLANELOC_SEED");
  const auto dir = fresh_dir("planeloc_cli_pipe");
  const std::string cfg = (dir / "pipe.cfg").string();
  spit(cfg, kTinyCfg);
  const std::string d1 = (dir / "data1").string(), o1 = (dir / "out1").string();
  const std::string d2 = (dir / "data2").string(), o2 = (dir / "out2").string();
  run_pipeline(cfg, d1, o1);
  run_pipeline(cfg, d2, o2);

  CHECK(slurp(d1 + "/split.txt") == slurp(d2 + "/split.txt"));
  CHECK(slurp(d1 + "/atlas.bin") == slurp(d2 + "/atlas.bin"));
  CHECK(slurp(o1 + "/arch.txt") == slurp(o2 + "/arch.txt"));
  CHECK(slurp(o1 + "/train/train_log.csv") == slurp(o2 + "/train/train_log.csv"));
  CHECK(slurp(o1 + "/eval/volumes.csv") == slurp(o2 + "/eval/volumes.csv"));
  CHECK(slurp(o1 + "/eval/aggregate.csv") == slurp(o2 + "/eval/aggregate.csv"));

  // the re-runnable record sits next to every command's outputs
  const std::string manifest = slurp(o1 + "/eval/manifest.txt");
  CHECK(contains(manifest, "version planeloc 0.1.0"));
  CHECK(contains(manifest, "command eval"));
  CHECK(contains(manifest, "seed 77"));
  CHECK(contains(manifest, "input " + d1 + "/split.txt"));
  CHECK(contains(manifest, "output " + o1 + "/eval/aggregate.csv"));
  CHECK(contains(slurp(o1 + "/eval/config_echo.cfg"), "run.seed = 77"));

  const std::string agg = slurp(o1 + "/eval/aggregate.csv");
  CHECK(contains(agg, "plane,ang_mean,ang_std,dis_mean,dis_std,ssim_mean,ssim_std"));
  CHECK(contains(agg, "\nAvg,"));

  // two test volumes: per-volume traces and both plot families exist
  int traces = 0, svgs = 0;
  for (const auto& e : std::filesystem::directory_iterator(o1 + "/eval")) {
    const auto name = e.path().filename().string();
    if (contains(name, "_trace.csv")) ++traces;
    if (contains(name, ".svg")) ++svgs;
  }
  CHECK(traces == 2);
  CHECK(svgs == 4);

  // report is idempotent over its own output and re-records the directory
  const std::string before = slurp(o1 + "/eval/aggregate.csv");
  CHECK(run(bin() + " --config " + cfg + " --data " + d1 + " --out " + o1 +
            " report > /dev/null") == 0);
  CHECK(slurp(o1 + "/eval/aggregate.csv") == before);
  CHECK(slurp(o1 + "/eval/volumes.csv") == slurp(o2 + "/eval/volumes.csv"));
  CHECK(contains(slurp(o1 + "/eval/manifest.txt"), "command report"));

  // eval without a trained checkpoint exits 3 and names it
  const std::string o3 = (dir / "out3").string();
  std::filesystem::create_directories(o3);
  std::filesystem::copy_file(o1 + "/arch.txt", o3 + "/arch.txt");
  const std::string eval_err = (dir / "eval_err.txt").string();
  CHECK(run(bin() + " --config " + cfg + " --set eval.use_collab=0 --data " + d1 + " --out " +
            o3 + " eval > /dev/null 2> " + eval_err) == 3);
  CHECK(contains(slurp(eval_err), o3 + "/train/agent.ckpt"));

  // a corrupt report table exits 4 with the line flagged
  const std::string vols = o2 + "/eval/volumes.csv";
  auto rows = slurp(vols);
  rows.replace(rows.find(",", rows.find('\n')) + 1, 3, "x.y");
  spit(vols, rows);
  const std::string report_err = (dir / "report_err.txt").string();
  CHECK(run(bin() + " --config " + cfg + " --data " + d2 + " --out " + o2 +
            " report > /dev/null 2> " + report_err) == 4);
  CHECK(contains(slurp(report_err), ":2"));
  spit(vols, "not,a,header\n");
  CHECK(run(bin() + " --config " + cfg + " --data " + d2 + " --out " + o2 +
            " report > /dev/null 2>&1") == 4);

  // a config file with an unknown key exits 2
  const std::string bad = (dir / "bad.cfg").string();
  spit(bad, "nope.key = 1\n");
  CHECK(run(bin() + " --config " + bad + " phantom-gen > /dev/null 2>&1") == 2);
}

TEST_CASE("gradcheck passes clean and fails under the poisoned backward") {
  const auto dir = fresh_dir("planeloc_cli_gc");
  const std::string base = bin() + " --data " + (dir / "d").string() + " --out " +
                           (dir / "o").string() + " gradcheck";
  CHECK(run(base + " > /dev/null") == 0);
  const std::string report = slurp((dir / "o" / "gradcheck" / "gradcheck.txt").string());
  CHECK(contains(report, "pass conv2d"));
  CHECK(!contains(report, "FAIL"));
  CHECK(run("PLANELOC_BREAK_BACKWARD=conv2d " + base + " > /dev/null 2>&1") == 5);
}

TEST_CASE("every command prints its version and effective seed") {
  const auto dir = fresh_dir("planeloc_cli_seed");
  const std::string d = (dir / "d").string();
  const std::string log = (dir / "stdout.txt").string();
  CHECK(run("PLANELOC_SEED=4242 " + bin() + " --seed 1 --set phantom.count=3 --set " +
            "phantom.dim=24 --data " + d + " --out " + d + " phantom-gen > " + log) == 0);
  const std::string out = slurp(log);
  CHECK(contains(out, "planeloc 0.1.0"));
  CHECK(contains(out, "effective seed 4242"));
  CHECK(contains(slurp(d + "/config_echo.cfg"), "run.seed = 4242"));

  const std::string help = (dir / "help.txt").string();
  CHECK(run(bin() + " --help > " + help) == 0);
  const std::string h = slurp(help);
  for (const char* key : {"run.seed", "ddqn.lr_omega", "search.tau_start", "collab.hidden"}) {
    CHECK(contains(h, key));
  }
}
