#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "planeloc/cli.hpp"
#include "planeloc/collab.hpp"
#include "planeloc/errors.hpp"
#include "planeloc/nn/gradcheck.hpp"
#include "planeloc/train/trainer.hpp"

namespace planeloc::cli {

namespace fs = std::filesystem;

namespace {

phantom::PhantomConfig phantom_cfg(const RunConfig& c) {
  phantom::PhantomConfig p;
  p.dim = c.phantom_dim;
  p.spacing_mm = c.phantom_spacing_mm;
  return p;
}

marl::EnvConfig env_cfg(const RunConfig& c) {
  marl::EnvConfig e;
  e.obs_h = e.obs_w = c.obs;
  e.pixel_spacing_mm = c.pixel_spacing_mm;
  e.angle_step_deg = c.angle_step_deg;
  e.dist_step_mm = c.dist_step_mm;
  e.d_scale_mm = c.d_scale_mm;
  return e;
}

phantom::WarmStartConfig warm_cfg(const RunConfig& c) {
  phantom::WarmStartConfig w;
  w.angle_range_deg = c.warm_angle_deg;
  w.dist_range_mm = c.warm_dist_mm;
  w.landmark_sigma_mm = c.landmark_sigma_mm;
  return w;
}

nas::NetConfig net_cfg(const RunConfig& c) {
  nas::NetConfig n;
  n.obs_h = n.obs_w = c.obs;
  n.stem_channels = c.stem_channels;
  return n;
}

nas::SearchHyper hyper_cfg(const RunConfig& c) {
  nas::SearchHyper h;
  h.gamma = c.gamma;
  h.lr_omega = c.lr_omega;
  h.lr_alpha = c.lr_alpha;
  h.batch_size = c.batch;
  h.target_sync = c.target_sync;
  h.tau_start = c.tau_start;
  h.tau_end = c.tau_end;
  return h;
}

train::LoopConfig loop_cfg(const RunConfig& c, int epochs, double lr) {
  train::LoopConfig l;
  l.env = env_cfg(c);
  l.warm = warm_cfg(c);
  l.gamma = c.gamma;
  l.lr = lr;
  l.batch_size = c.batch;
  l.target_sync = c.target_sync;
  l.replay_capacity = static_cast<std::size_t>(c.replay_capacity);
  l.replay_exponent = c.replay_exponent;
  l.grad_steps_per_episode = c.grad_steps;
  l.epochs = epochs;
  l.eps_hi = c.eps_hi;
  l.eps_lo = c.eps_lo;
  return l;
}

std::string phantom_name(int idx) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "phantom_%03d.phan", idx);
  return buf;
}

void make_dir(const std::string& dir) {
  try {
    fs::create_directories(dir);
  } catch (const std::exception& e) {
    throw IoError("cannot create " + dir + ": " + e.what());
  }
}

void require_file(const std::string& path, const char* producer) {
  if (!fs::exists(path)) {
    throw MissingArtifact("missing " + path + " (run `" + producer + "` first)");
  }
}

// Every command leaves the same re-runnable record next to its outputs.
struct CommandLog {
  std::string dir;
  std::string command;
  std::uint64_t seed;
  std::vector<std::string> inputs, outputs;

  CommandLog(const RunConfig& cfg, const std::string& cmd, const std::string& d)
      : dir(d), command(cmd), seed(cfg.seed) {
    make_dir(dir);
    std::ofstream echo(dir + "/config_echo.cfg");
    echo << "# effective configuration (" << kVersion << ")\n";
    for (const auto& [info, value] : config_entries(cfg)) {
      echo << info.key << " = " << value << "\n";
    }
    if (!echo) throw IoError("failed writing " + dir + "/config_echo.cfg");
    std::printf("%s %s: effective seed %llu\n", kVersion, cmd.c_str(),
                static_cast<unsigned long long>(seed));
  }

  void finish() {
    std::ofstream f(dir + "/manifest.txt");
    f << "version " << kVersion << "\n";
    f << "command " << command << "\n";
    f << "seed " << seed << "\n";
    for (const auto& p : inputs) f << "input " << p << "\n";
    for (const auto& p : outputs) f << "output " << p << "\n";
    f << "output " << dir << "/config_echo.cfg\n";
    f << "output " << dir << "/manifest.txt\n";
    if (!f) throw IoError("failed writing " + dir + "/manifest.txt");
  }
};

struct Dataset {
  std::vector<phantom::Phantom> vols;
  std::vector<const phantom::Phantom*> train, val, test;
  std::vector<std::string> files;
};

Dataset load_dataset(const RunConfig& cfg, CommandLog& log) {
  const std::string split_path = cfg.data_dir + "/split.txt";
  require_file(split_path, "phantom-gen");
  std::ifstream in(split_path);
  if (!in) throw MissingArtifact("cannot open " + split_path);

  Dataset ds;
  std::vector<std::pair<std::string, std::string>> entries;  // role, file
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string role, file, extra;
    ls >> role >> file;
    if (file.empty() || (ls >> extra)) {
      throw FormatError(split_path + ":" + std::to_string(lineno) + ": expected 'role file'");
    }
    if (role != "train" && role != "val" && role != "test") {
      throw FormatError(split_path + ":" + std::to_string(lineno) + ": unknown role '" + role +
                        "'");
    }
    entries.push_back({role, file});
  }
  log.inputs.push_back(split_path);
  ds.vols.reserve(entries.size());
  for (const auto& [role, file] : entries) {
    const std::string path = cfg.data_dir + "/" + file;
    require_file(path, "phantom-gen");
    ds.vols.push_back(phantom::load(path));
    ds.files.push_back(path);
    log.inputs.push_back(path);
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& role = entries[i].first;
    const auto* p = &ds.vols[i];
    (role == "train" ? ds.train : role == "val" ? ds.val : ds.test).push_back(p);
  }
  return ds;
}

phantom::Atlas load_data_atlas(const RunConfig& cfg, CommandLog& log) {
  const std::string path = cfg.data_dir + "/atlas.bin";
  require_file(path, "phantom-gen");
  log.inputs.push_back(path);
  return phantom::load_atlas(path);
}

std::string arch_path(const RunConfig& cfg) { return cfg.out_dir + "/arch.txt"; }
std::string agent_ckpt(const RunConfig& cfg) { return cfg.out_dir + "/train/agent.ckpt"; }
std::string collab_ckpt(const RunConfig& cfg) { return cfg.out_dir + "/collab/collab.ckpt"; }

nas::DiscreteArch load_arch_input(const RunConfig& cfg, CommandLog& log) {
  require_file(arch_path(cfg), "derive");
  log.inputs.push_back(arch_path(cfg));
  return nas::load_arch(arch_path(cfg));
}

train::DerivedTrainer make_base(const RunConfig& cfg, const nas::DiscreteArch& arch,
                                const train::LoopConfig& lc) {
  Rng init = Rng::from_seed(cfg.seed).split("derived-init");
  return train::DerivedTrainer(net_cfg(cfg), arch, lc, init);
}

void load_agent(const RunConfig& cfg, train::DerivedTrainer& base, CommandLog& log) {
  require_file(agent_ckpt(cfg), "train");
  log.inputs.push_back(agent_ckpt(cfg));
  nn::load_checkpoint(base.online(), agent_ckpt(cfg));
  base.sync_target();
}

}  // namespace

void cmd_phantom_gen(const RunConfig& cfg) {
  CommandLog log(cfg, "phantom-gen", cfg.data_dir);
  const auto pc = phantom_cfg(cfg);
  const auto split =
      phantom::split_dataset(cfg.seed, cfg.train_frac, cfg.val_frac, cfg.phantom_count);

  std::vector<phantom::Phantom> vols;
  const Rng gen = Rng::from_seed(cfg.seed).split("phantom-gen");
  for (int i = 0; i < cfg.phantom_count; ++i) {
    const Rng per = gen.split(static_cast<std::uint64_t>(i));
    phantom::Phantom ph;
    bool ok = false;
    for (std::uint64_t attempt = 0; attempt < 100 && !ok; ++attempt) {
      Rng a = per.split(attempt);
      try {
        ph = phantom::generate(pc, a.next_u64());
        ok = true;
      } catch (const Error&) {
      }
    }
    if (!ok) {
      throw InvalidConfig("phantom-gen: volume " + std::to_string(i) +
                          " never satisfied the geometry constraints");
    }
    const std::string path = cfg.data_dir + "/" + phantom_name(i);
    phantom::save(ph, path);
    log.outputs.push_back(path);
    vols.push_back(std::move(ph));
  }

  std::vector<const phantom::Phantom*> train_view;
  for (int i : split.train) train_view.push_back(&vols[static_cast<std::size_t>(i)]);
  const auto atlas = phantom::compute_atlas(train_view);
  phantom::save_atlas(atlas, cfg.data_dir + "/atlas.bin");
  log.outputs.push_back(cfg.data_dir + "/atlas.bin");

  const std::string split_path = cfg.data_dir + "/split.txt";
  std::ofstream f(split_path);
  for (int i : split.train) f << "train " << phantom_name(i) << "\n";
  for (int i : split.val) f << "val " << phantom_name(i) << "\n";
  for (int i : split.test) f << "test " << phantom_name(i) << "\n";
  if (!f) throw IoError("failed writing " + split_path);
  log.outputs.push_back(split_path);
  log.finish();
  std::printf("wrote %d phantoms (%zu train / %zu val / %zu test)\n", cfg.phantom_count,
              split.train.size(), split.val.size(), split.test.size());
}

void cmd_search(const RunConfig& cfg) {
  const std::string dir = cfg.out_dir + "/search";
  CommandLog log(cfg, "search", dir);
  Dataset ds = load_dataset(cfg, log);
  const auto atlas = load_data_atlas(cfg, log);
  if (ds.train.empty() || ds.val.empty()) {
    throw ConfigError("search needs non-empty train and val splits");
  }

  Rng init = Rng::from_seed(cfg.seed).split("supernet-init");
  nas::SupernetTrainer tr(net_cfg(cfg), hyper_cfg(cfg), init);
  const auto lc = loop_cfg(cfg, cfg.search_epochs, cfg.lr_omega);
  Rng rng = Rng::from_seed(cfg.seed).split("search");
  const auto res = train::run_search(tr, ds.train, ds.val, atlas, lc, rng);

  for (std::size_t k = 0; k < res.alpha_history.size(); ++k) {
    const std::string path = dir + "/alpha_ep" + std::to_string(k) + ".ckpt";
    nn::save_checkpoint(*res.alpha_history[k], path);
    log.outputs.push_back(path);
  }
  nn::save_checkpoint(*res.alpha_history[res.best_epoch], dir + "/alpha_best.ckpt");
  log.outputs.push_back(dir + "/alpha_best.ckpt");
  train::write_train_log(dir + "/search_log.csv", res.log);
  log.outputs.push_back(dir + "/search_log.csv");
  log.finish();
  std::printf("search done: best epoch %zu of %d (val reward sum %.3f)\n", res.best_epoch,
              cfg.search_epochs, res.val_reward_sums[res.best_epoch]);
}

void cmd_derive(const RunConfig& cfg) {
  CommandLog log(cfg, "derive", cfg.out_dir);
  const std::string alpha_path = cfg.out_dir + "/search/alpha_best.ckpt";
  require_file(alpha_path, "search");
  log.inputs.push_back(alpha_path);

  nn::ParamStore alphas;
  nas::create_alpha_params(alphas);
  nn::load_checkpoint(alphas, alpha_path);
  const auto arch = nas::derive_architecture(alphas);
  nas::save_arch(arch, arch_path(cfg));
  log.outputs.push_back(arch_path(cfg));
  log.finish();
  std::printf("derived architecture -> %s\n", arch_path(cfg).c_str());
}

void cmd_train(const RunConfig& cfg) {
  const std::string dir = cfg.out_dir + "/train";
  CommandLog log(cfg, "train", dir);
  Dataset ds = load_dataset(cfg, log);
  const auto atlas = load_data_atlas(cfg, log);
  if (ds.train.empty() || ds.val.empty()) {
    throw ConfigError("train needs non-empty train and val splits");
  }
  const auto arch = load_arch_input(cfg, log);

  const auto lc = loop_cfg(cfg, cfg.train_epochs, cfg.lr_omega);
  auto base = make_base(cfg, arch, lc);
  Rng rng = Rng::from_seed(cfg.seed).split("train");
  const auto rows = train::run_train(base, ds.train, ds.val, atlas, lc, rng);

  nn::save_checkpoint(base.online(), agent_ckpt(cfg));
  log.outputs.push_back(agent_ckpt(cfg));
  train::write_train_log(dir + "/train_log.csv", rows);
  log.outputs.push_back(dir + "/train_log.csv");
  log.finish();
  std::printf("train done: final val reward sum %.3f\n", rows.back().val_reward_sum);
}

void cmd_train_collab(const RunConfig& cfg) {
  const std::string dir = cfg.out_dir + "/collab";
  CommandLog log(cfg, "train-collab", dir);
  Dataset ds = load_dataset(cfg, log);
  const auto atlas = load_data_atlas(cfg, log);
  if (ds.train.empty() || ds.val.empty()) {
    throw ConfigError("train-collab needs non-empty train and val splits");
  }
  const auto arch = load_arch_input(cfg, log);

  const auto lc = loop_cfg(cfg, cfg.collab_epochs, cfg.collab_lr);
  auto base = make_base(cfg, arch, lc);
  load_agent(cfg, base, log);

  const collab::CalibConfig ccfg{cfg.collab_hidden, cfg.collab_layers};
  Rng cinit = Rng::from_seed(cfg.seed).split("collab-init");
  collab::CollabTrainer tr(base, ccfg, lc, cfg.collab_joint, cinit);
  Rng rng = Rng::from_seed(cfg.seed).split("train-collab");
  const auto rows = collab::train_calibrator(tr, ds.train, ds.val, atlas, lc, rng);

  nn::save_checkpoint(tr.theta(), collab_ckpt(cfg));
  log.outputs.push_back(collab_ckpt(cfg));
  if (cfg.collab_joint) {
    nn::save_checkpoint(base.online(), dir + "/agent_joint.ckpt");
    log.outputs.push_back(dir + "/agent_joint.ckpt");
  }
  train::write_train_log(dir + "/collab_log.csv", rows);
  log.outputs.push_back(dir + "/collab_log.csv");
  log.finish();
  std::printf("train-collab done: final val reward sum %.3f\n", rows.back().val_reward_sum);
}

void cmd_eval(const RunConfig& cfg) {
  const std::string dir = cfg.out_dir + "/eval";
  CommandLog log(cfg, "eval", dir);
  Dataset ds = load_dataset(cfg, log);
  const auto atlas = load_data_atlas(cfg, log);
  if (ds.test.empty()) throw ConfigError("eval needs a non-empty test split");
  const auto arch = load_arch_input(cfg, log);

  const auto lc = loop_cfg(cfg, 1, cfg.lr_omega);
  auto base = make_base(cfg, arch, lc);
  load_agent(cfg, base, log);

  nn::ParamStore theta;
  marl::CalibrateFn calib = nullptr;
  const collab::CalibConfig ccfg{cfg.collab_hidden, cfg.collab_layers};
  if (cfg.eval_use_collab) {
    require_file(collab_ckpt(cfg), "train-collab");
    log.inputs.push_back(collab_ckpt(cfg));
    Rng cinit = Rng::from_seed(cfg.seed).split("collab-init");
    collab::create_calib_params(theta, ccfg, cinit);
    nn::load_checkpoint(theta, collab_ckpt(cfg), "collab.");
    calib = collab::make_calibrate_fn(theta, ccfg);
  }

  Rng rng = Rng::from_seed(cfg.seed).split("eval");
  const auto out = train::evaluate(base.q_reader(calib), ds.test, atlas, env_cfg(cfg),
                                   warm_cfg(cfg), rng);
  metrics::emit_report(dir, out.rows, out.traces);
  log.outputs.push_back(dir + "/volumes.csv");
  log.outputs.push_back(dir + "/aggregate.csv");
  for (std::size_t i = 0; i < out.rows.size(); ++i) {
    const std::string trace_path = dir + "/" + out.rows[i].id + "_trace.csv";
    metrics::write_trace_csv(trace_path, out.traces[i]);
    log.outputs.push_back(trace_path);
    log.outputs.push_back(dir + "/" + out.rows[i].id + "_sad.svg");
    log.outputs.push_back(dir + "/" + out.rows[i].id + "_q.svg");
  }
  log.finish();
  std::printf("eval done: %zu volumes -> %s\n", out.rows.size(), dir.c_str());
}

void cmd_report(const RunConfig& cfg) {
  const std::string dir = cfg.out_dir + "/eval";
  const std::string path = dir + "/volumes.csv";
  CommandLog log(cfg, "report", dir);
  require_file(path, "eval");
  log.inputs.push_back(path);

  std::ifstream in(path);
  if (!in) throw MissingArtifact("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) ||
      line != "volume,ang_S,dis_S,ang_T,dis_T,ang_C,dis_C,ssim_S,ssim_T,ssim_C") {
    throw FormatError(path + ": unexpected header");
  }
  std::vector<metrics::VolumeRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    metrics::VolumeRow r;
    std::string cell;
    if (!std::getline(ls, r.id, ',') || r.id.empty()) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": missing volume id");
    }
    double vals[9];
    for (int k = 0; k < 9; ++k) {
      if (!std::getline(ls, cell, ',')) {
        throw FormatError(path + ":" + std::to_string(lineno) + ": expected 10 columns");
      }
      std::size_t used = 0;
      try {
        vals[k] = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != cell.size() || cell.empty()) {
        throw FormatError(path + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    }
    if (std::getline(ls, cell, ',')) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected 10 columns");
    }
    for (int p = 0; p < 3; ++p) {
      r.ang[static_cast<std::size_t>(p)] = vals[2 * p];
      r.dis[static_cast<std::size_t>(p)] = vals[2 * p + 1];
      r.ssim[static_cast<std::size_t>(p)] = vals[6 + p];
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw FormatError(path + ": no data rows");

  metrics::emit_report(dir, rows, {});
  log.outputs.push_back(dir + "/volumes.csv");
  log.outputs.push_back(dir + "/aggregate.csv");
  log.finish();
  std::printf("report done: re-aggregated %zu volumes\n", rows.size());
}

void cmd_gradcheck(const RunConfig& cfg) {
  const std::string dir = cfg.out_dir + "/gradcheck";
  CommandLog log(cfg, "gradcheck", dir);
  const auto cases = nn::run_gradcheck_suite(cfg.seed, 2, 1e-4);
  std::ofstream f(dir + "/gradcheck.txt");
  int failed = 0;
  for (const auto& c : cases) {
    const char* tag = c.pass ? "pass" : "FAIL";
    std::printf("%s %-28s max_rel_err=%.3e (%zu grads)\n", tag, c.name.c_str(), c.max_rel_err,
                c.checked);
    f << tag << " " << c.name << " max_rel_err=" << c.max_rel_err << "\n";
    if (!c.pass) ++failed;
  }
  if (!f) throw IoError("failed writing " + dir + "/gradcheck.txt");
  log.outputs.push_back(dir + "/gradcheck.txt");
  log.finish();
  if (failed > 0) {
    throw VerificationFailure(std::to_string(failed) + " gradient checks failed");
  }
  std::printf("gradcheck done: %zu cases pass\n", cases.size());
}

}  // namespace planeloc::cli
