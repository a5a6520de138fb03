#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace planeloc::cli {

inline constexpr const char* kVersion = "planeloc 0.1.0";

// Every knob of the pipeline, file-serializable as flat section.key=value
// lines. Defaults here are the experiment defaults.
struct RunConfig {
  int phantom_count = 40;
  int phantom_dim = 48;          // voxels per side
  double phantom_spacing_mm = 0.5;
  double train_frac = 0.8;
  double val_frac = 0.1;

  int obs = 24;                  // slice height = width, px
  double pixel_spacing_mm = 1.0;
  double angle_step_deg = 0.5;
  double dist_step_mm = 0.1;
  double d_scale_mm = 0.0;       // 0: half the volume diagonal
  int stem_channels = 8;

  double warm_angle_deg = 20.0;
  double warm_dist_mm = 4.0;
  double landmark_sigma_mm = 1.0;

  int replay_capacity = 15000;
  double replay_exponent = 0.6;
  double gamma = 0.9;
  int batch = 32;
  double lr_omega = 5e-5;
  int target_sync = 1500;
  int grad_steps = 10;
  double eps_hi = 1.0;
  double eps_lo = 0.1;

  int search_epochs = 10;
  double lr_alpha = 0.05;
  double tau_start = 10.0;
  double tau_end = 0.1;

  int train_epochs = 30;

  int collab_hidden = 64;
  int collab_layers = 2;
  double collab_lr = 5e-5;
  int collab_epochs = 10;
  bool collab_joint = false;
  bool eval_use_collab = false;

  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::string data_dir = "data";
};

struct KeyInfo {
  std::string key;
  std::string unit;  // empty when unitless
  std::string help;
};

// (key description, current value) for every key, in table order.
std::vector<std::pair<KeyInfo, std::string>> config_entries(const RunConfig& cfg);

// ConfigError on unknown keys or unparseable values.
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);

// Flat key=value lines; '#' comments and blank lines allowed.
// MissingArtifact when the file cannot be opened.
void load_config_file(RunConfig& cfg, const std::string& path);

// PLANELOC_SEED wins over both file and flags when set.
void apply_env_overrides(RunConfig& cfg);

void validate_config(const RunConfig& cfg);  // ConfigError

std::string help_text();  // every key with default and unit

void cmd_phantom_gen(const RunConfig& cfg);
void cmd_search(const RunConfig& cfg);
void cmd_derive(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_train_collab(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);
void cmd_report(const RunConfig& cfg);
void cmd_gradcheck(const RunConfig& cfg);

// 2 config, 3 missing artifact, 4 format, 5 verification, 1 anything else
int run_command(const std::string& name, const RunConfig& cfg);

}  // namespace planeloc::cli
