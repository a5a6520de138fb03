#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "planeloc/marl/env.hpp"
#include "planeloc/marl/replay.hpp"
#include "planeloc/metrics.hpp"
#include "planeloc/nas/search.hpp"
#include "planeloc/phantom.hpp"

namespace planeloc::train {

// Batch-1 greedy Q readout: 9-channel observation -> per-agent action values.
using QFn = std::function<std::array<std::array<float, nas::kNumActions>, nas::kNumAgents>(
    const nn::TensorF& obs)>;

struct LoopConfig {
  marl::EnvConfig env;
  phantom::WarmStartConfig warm;
  double gamma = 0.9;
  double lr = 5e-5;
  int batch_size = 32;
  std::int64_t target_sync = 1500;
  std::size_t replay_capacity = 15000;
  double replay_exponent = 0.6;
  int grad_steps_per_episode = 10;
  int epochs = 10;
  double eps_hi = 1.0;
  double eps_lo = 0.1;
};

// One fixed-budget episode. Epsilon-greedy on q; transitions pushed to buf
// when given. A trace records rows for steps 0..N (row 0 is the warm start,
// the final row the post-episode state). Returns the summed reward.
double run_episode(const phantom::Phantom& ph, marl::EnvMode mode,
                   const std::array<geom::PlaneParams, 3>& start, const QFn& q, double eps,
                   Rng& rng, const marl::EnvConfig& ec, marl::ReplayBuffer* buf,
                   metrics::StepTrace* trace, marl::EnvState* final_state = nullptr);

struct ValStats {
  double reward_sum = 0;    // all steps, agents and volumes
  double mean_ang_deg = 0;  // final-step plane errors averaged over volumes/planes
  double mean_dis_mm = 0;
};

// Greedy eval-mode episodes from aligned warm starts over the whole set.
ValStats validate(const std::vector<const phantom::Phantom*>& vols, const phantom::Atlas& atlas,
                  const QFn& q, const marl::EnvConfig& ec, const phantom::WarmStartConfig& wc,
                  Rng& rng);

struct EpochLog {
  int epoch = 0;
  double val_reward_sum = 0;
  double mean_ang_deg = 0;
  double mean_dis_mm = 0;
  double loss = 0;
};

void write_train_log(const std::string& path, const std::vector<EpochLog>& rows);

// DDQN trainer for a discrete architecture: weight steps on priority batches,
// periodic target copies.
class DerivedTrainer {
 public:
  DerivedTrainer(const nas::NetConfig& net, const nas::DiscreteArch& arch, const LoopConfig& cfg,
                 Rng& init);

  float omega_step(marl::ReplayBuffer& buf, Rng& rng, const marl::CalibrateFn& calib = nullptr);
  QFn q_reader(const marl::CalibrateFn& calib = nullptr);

  const nas::NetConfig& net() const { return net_; }
  const nas::DiscreteArch& arch() const { return arch_; }
  nn::ParamStore& online() { return online_; }
  nn::ParamStore& target() { return target_; }
  std::int64_t iters() const { return iters_; }
  void sync_target() { target_.copy_values_from(online_); }

 private:
  nas::NetConfig net_;
  nas::DiscreteArch arch_;
  double gamma_;
  int batch_;
  std::int64_t sync_;
  nn::ParamStore online_;
  nn::ParamStore target_;
  nn::Adam opt_;
  std::int64_t iters_ = 0;
};

struct SearchResult {
  std::vector<double> val_reward_sums;
  std::vector<std::unique_ptr<nn::ParamStore>> alpha_history;  // per-epoch copies
  std::size_t best_epoch = 0;
  std::vector<EpochLog> log;
};

// GDAS loop: per epoch, one exploratory episode per training volume on a
// freshly sampled subgraph, alternating updates after each, then greedy
// validation on the argmax subgraph.
SearchResult run_search(nas::SupernetTrainer& tr, const std::vector<const phantom::Phantom*>& tv,
                        const std::vector<const phantom::Phantom*>& vv,
                        const phantom::Atlas& atlas, const LoopConfig& cfg, Rng& rng);

// DDQN loop over a fixed architecture; returns per-epoch logs (validation on
// greedy rollouts) and leaves the trainer holding the final weights.
std::vector<EpochLog> run_train(DerivedTrainer& tr,
                                const std::vector<const phantom::Phantom*>& tv,
                                const std::vector<const phantom::Phantom*>& vv,
                                const phantom::Atlas& atlas, const LoopConfig& cfg, Rng& rng,
                                const marl::CalibrateFn& calib = nullptr);

struct EvalOutput {
  std::vector<metrics::VolumeRow> rows;
  std::vector<metrics::StepTrace> traces;
};

// Greedy 30-step rollouts from aligned warm starts; final planes scored with
// angle/offset errors and slice similarity against the ground truth.
EvalOutput evaluate(const QFn& q, const std::vector<const phantom::Phantom*>& vols,
                    const phantom::Atlas& atlas, const marl::EnvConfig& ec,
                    const phantom::WarmStartConfig& wc, Rng& rng);

}  // namespace planeloc::train
