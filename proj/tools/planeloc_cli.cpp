#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "planeloc/cli.hpp"

// Pipeline driver. Precedence, lowest to highest: built-in defaults,
// --config file, --set key=value (in order), shortcut flags, PLANELOC_SEED.
int main(int argc, char** argv) {
  using namespace planeloc::cli;

  CLI::App app{std::string(kVersion) + " -- plane localization pipeline"};
  app.require_subcommand(1);
  app.footer("configuration keys:\n" + help_text());

  std::string config_path;
  std::vector<std::string> sets;
  std::string seed_flag, out_flag, data_flag;
  app.add_option("--config", config_path, "flat key=value config file");
  app.add_option("--set", sets, "override one key, e.g. --set ddqn.batch=16")
      ->take_all();
  app.add_option("--seed", seed_flag, "shortcut for --set run.seed=N");
  app.add_option("--out", out_flag, "shortcut for --set run.out=DIR");
  app.add_option("--data", data_flag, "shortcut for --set run.data=DIR");

  const char* names[] = {"phantom-gen", "search",      "derive", "train",
                         "train-collab", "eval",        "report", "gradcheck"};
  const char* blurbs[] = {
      "synthesize volumes, splits and the mean-shape atlas",
      "architecture search over the supernet",
      "freeze the searched architecture to a discrete graph",
      "train the localization agents on the frozen architecture",
      "fit the q-value calibrator on top of the trained agents",
      "greedy rollouts on the test split with reports",
      "re-aggregate an existing per-volume report",
      "finite-difference audit of every backward rule",
  };
  for (int i = 0; i < 8; ++i) app.add_subcommand(names[i], blurbs[i]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  RunConfig cfg;
  try {
    if (!config_path.empty()) load_config_file(cfg, config_path);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
        return 2;
      }
      set_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!seed_flag.empty()) set_key(cfg, "run.seed", seed_flag);
    if (!out_flag.empty()) set_key(cfg, "run.out", out_flag);
    if (!data_flag.empty()) set_key(cfg, "run.data", data_flag);
    apply_env_overrides(cfg);
    validate_config(cfg);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  return run_command(app.get_subcommands().front()->get_name(), cfg);
}
