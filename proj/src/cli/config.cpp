#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "planeloc/cli.hpp"
#include "planeloc/errors.hpp"

namespace planeloc::cli {

namespace {

struct KeyDef {
  const char* key;
  const char* unit;
  const char* help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class T>
T parse_num(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T v{};
  in >> v;
  if (in.fail() || !in.eof()) {
    throw ConfigError("config: bad value for " + key + ": '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true") return true;
  if (text == "0" || text == "false") return false;
  throw ConfigError("config: bad value for " + key + ": '" + text + "' (want 0/1/true/false)");
}

std::string num_str(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

#define NUM_KEY(name, unit, help, field, type)                                      \
  KeyDef {                                                                          \
    name, unit, help, [](const RunConfig& c) { return num_str(double(c.field)); },  \
        [](RunConfig& c, const std::string& v) { c.field = parse_num<type>(name, v); } \
  }

#define BOOL_KEY(name, help, field)                                                  \
  KeyDef {                                                                           \
    name, "", help, [](const RunConfig& c) { return c.field ? "1" : "0"; },          \
        [](RunConfig& c, const std::string& v) { c.field = parse_bool(name, v); }    \
  }

#define STR_KEY(name, help, field)                                    \
  KeyDef {                                                            \
    name, "", help, [](const RunConfig& c) { return c.field; },       \
        [](RunConfig& c, const std::string& v) { c.field = v; }       \
  }

const std::vector<KeyDef>& key_defs() {
  static const std::vector<KeyDef> defs = {
      NUM_KEY("phantom.count", "", "number of volumes to generate", phantom_count, int),
      NUM_KEY("phantom.dim", "voxels", "volume side length", phantom_dim, int),
      NUM_KEY("phantom.spacing_mm", "mm", "voxel spacing", phantom_spacing_mm, double),
      NUM_KEY("phantom.train_frac", "", "training fraction of the split", train_frac, double),
      NUM_KEY("phantom.val_frac", "", "validation fraction of the split", val_frac, double),
      NUM_KEY("env.obs", "px", "slice height and width", obs, int),
      NUM_KEY("env.pixel_spacing_mm", "mm", "slice pixel spacing", pixel_spacing_mm, double),
      NUM_KEY("env.angle_step_deg", "deg", "per-action angle increment", angle_step_deg, double),
      NUM_KEY("env.dist_step_mm", "mm", "per-action offset increment", dist_step_mm, double),
      NUM_KEY("env.d_scale_mm", "mm", "offset normalizer (0 = half diagonal)", d_scale_mm,
              double),
      NUM_KEY("net.stem_channels", "", "stem width of the cell network", stem_channels, int),
      NUM_KEY("warm.angle_range_deg", "deg", "train-noise angle range", warm_angle_deg, double),
      NUM_KEY("warm.dist_range_mm", "mm", "train-noise offset range", warm_dist_mm, double),
      NUM_KEY("warm.landmark_sigma_mm", "mm", "align-mode landmark noise", landmark_sigma_mm,
              double),
      NUM_KEY("replay.capacity", "", "replay buffer size", replay_capacity, int),
      NUM_KEY("replay.exponent", "", "priority exponent", replay_exponent, double),
      NUM_KEY("ddqn.gamma", "", "discount factor", gamma, double),
      NUM_KEY("ddqn.batch", "", "gradient batch size", batch, int),
      NUM_KEY("ddqn.lr_omega", "", "weight learning rate", lr_omega, double),
      NUM_KEY("ddqn.target_sync", "", "iterations between target copies", target_sync, int),
      NUM_KEY("ddqn.grad_steps", "", "gradient steps per episode", grad_steps, int),
      NUM_KEY("eps.hi", "", "exploration rate at the start", eps_hi, double),
      NUM_KEY("eps.lo", "", "exploration rate floor", eps_lo, double),
      NUM_KEY("search.epochs", "", "architecture search epochs", search_epochs, int),
      NUM_KEY("search.lr_alpha", "", "architecture learning rate", lr_alpha, double),
      NUM_KEY("search.tau_start", "", "gumbel temperature at epoch 0", tau_start, double),
      NUM_KEY("search.tau_end", "", "gumbel temperature at the last epoch", tau_end, double),
      NUM_KEY("train.epochs", "", "agent training epochs", train_epochs, int),
      NUM_KEY("collab.hidden", "", "calibrator lstm width", collab_hidden, int),
      NUM_KEY("collab.layers", "", "calibrator lstm depth", collab_layers, int),
      NUM_KEY("collab.lr", "", "calibrator learning rate", collab_lr, double),
      NUM_KEY("collab.epochs", "", "calibrator training epochs", collab_epochs, int),
      BOOL_KEY("collab.joint", "also fine-tune the trunk in stage 2", collab_joint),
      BOOL_KEY("eval.use_collab", "evaluate with the calibrator applied", eval_use_collab),
      // full 64-bit getter; double would round large seeds
      KeyDef{"run.seed", "", "master seed for the whole pipeline",
             [](const RunConfig& c) { return std::to_string(c.seed); },
             [](RunConfig& c, const std::string& v) {
               c.seed = parse_num<std::uint64_t>("run.seed", v);
             }},
      STR_KEY("run.out", "output directory", out_dir),
      STR_KEY("run.data", "phantom dataset directory", data_dir),
  };
  return defs;
}

#undef NUM_KEY
#undef BOOL_KEY
#undef STR_KEY

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::vector<std::pair<KeyInfo, std::string>> config_entries(const RunConfig& cfg) {
  std::vector<std::pair<KeyInfo, std::string>> out;
  for (const auto& d : key_defs()) {
    out.push_back({{d.key, d.unit, d.help}, d.get(cfg)});
  }
  return out;
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& d : key_defs()) {
    if (key == d.key) {
      d.set(cfg, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                        ": expected key=value, got '" + line + "'");
    }
    set_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void apply_env_overrides(RunConfig& cfg) {
  if (const char* s = std::getenv("PLANELOC_SEED")) {
    set_key(cfg, "run.seed", s);
  }
}

void validate_config(const RunConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
  if (cfg.phantom_count < 1) fail("phantom.count must be positive");
  if (cfg.phantom_dim < 16) fail("phantom.dim must be at least 16 voxels");
  if (cfg.phantom_spacing_mm <= 0) fail("phantom.spacing_mm must be positive");
  if (cfg.train_frac <= 0 || cfg.val_frac < 0 || cfg.train_frac + cfg.val_frac >= 1.0) {
    fail("split fractions must satisfy 0 < train, 0 <= val, train+val < 1");
  }
  if (cfg.obs < 8) fail("env.obs must be at least 8 px");
  if (cfg.pixel_spacing_mm <= 0) fail("env.pixel_spacing_mm must be positive");
  if (cfg.angle_step_deg <= 0 || cfg.dist_step_mm <= 0) fail("action steps must be positive");
  if (cfg.d_scale_mm < 0) fail("env.d_scale_mm must be non-negative");
  if (cfg.stem_channels < 1) fail("net.stem_channels must be positive");
  if (cfg.warm_angle_deg < 0 || cfg.warm_dist_mm < 0 || cfg.landmark_sigma_mm < 0) {
    fail("warm-start ranges must be non-negative");
  }
  if (cfg.replay_capacity < 1) fail("replay.capacity must be positive");
  if (cfg.replay_exponent < 0) fail("replay.exponent must be non-negative");
  if (cfg.gamma < 0 || cfg.gamma >= 1) fail("ddqn.gamma must lie in [0,1)");
  if (cfg.batch < 1) fail("ddqn.batch must be positive");
  if (cfg.lr_omega <= 0 || cfg.lr_alpha <= 0 || cfg.collab_lr <= 0) {
    fail("learning rates must be positive");
  }
  if (cfg.target_sync < 1) fail("ddqn.target_sync must be positive");
  if (cfg.grad_steps < 0) fail("ddqn.grad_steps must be non-negative");
  if (cfg.eps_hi < 0 || cfg.eps_hi > 1 || cfg.eps_lo < 0 || cfg.eps_lo > cfg.eps_hi) {
    fail("exploration rates must satisfy 0 <= lo <= hi <= 1");
  }
  if (cfg.search_epochs < 1 || cfg.train_epochs < 1 || cfg.collab_epochs < 1) {
    fail("epoch counts must be positive");
  }
  if (cfg.tau_start <= 0 || cfg.tau_end <= 0) fail("temperatures must be positive");
  if (cfg.collab_hidden < 1 || cfg.collab_layers < 1) fail("calibrator geometry must be positive");
  if (cfg.out_dir.empty() || cfg.data_dir.empty()) fail("run.out and run.data must be set");
}

std::string help_text() {
  const RunConfig defaults;
  std::ostringstream out;
  out << "Configuration keys (file lines or --set key=value; defaults shown):\n";
  for (const auto& [info, value] : config_entries(defaults)) {
    out << "  " << info.key << " = " << value;
    if (!info.unit.empty()) out << " [" << info.unit << "]";
    out << "  -- " << info.help << "\n";
  }
  out << "\nThe PLANELOC_SEED environment variable overrides run.seed.\n";
  return out.str();
}

int run_command(const std::string& name, const RunConfig& cfg) {
  try {
    validate_config(cfg);
    if (name == "phantom-gen") {
      cmd_phantom_gen(cfg);
    } else if (name == "search") {
      cmd_search(cfg);
    } else if (name == "derive") {
      cmd_derive(cfg);
    } else if (name == "train") {
      cmd_train(cfg);
    } else if (name == "train-collab") {
      cmd_train_collab(cfg);
    } else if (name == "eval") {
      cmd_eval(cfg);
    } else if (name == "report") {
      cmd_report(cfg);
    } else if (name == "gradcheck") {
      cmd_gradcheck(cfg);
    } else {
      throw ConfigError("unknown command: " + name);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const InvalidConfig& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const MissingArtifact& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const VersionError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const VerificationFailure& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 5;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace planeloc::cli
