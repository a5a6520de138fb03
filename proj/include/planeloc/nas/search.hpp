#pragma once

#include <cstdint>

#include "planeloc/marl/ddqn.hpp"
#include "planeloc/marl/replay.hpp"
#include "planeloc/nas/network.hpp"

namespace planeloc::nas {

// Clamped linear ramp from `start` at step 0 to `end` at step `total`.
double linear_schedule(double start, double end, std::int64_t step, std::int64_t total);

// Exploration rate: linear decay over the first half of the budget, flat after.
double epsilon_at(std::int64_t iter, std::int64_t total_iters, double eps_hi = 1.0,
                  double eps_lo = 0.1);

struct SearchHyper {
  double gamma = 0.9;
  double lr_omega = 5e-5;
  double lr_alpha = 0.05;
  int batch_size = 32;
  std::int64_t target_sync = 1500;
  double tau_start = 10.0;
  double tau_end = 0.1;
};

// Owns the supernet weights, their target copy and the architecture logits.
// Weight steps fit sampled subgraphs on priority batches; architecture steps
// route gradients to the logits through straight-through gates on uniform
// batches. The two never touch each other's parameters.
class SupernetTrainer {
 public:
  SupernetTrainer(const NetConfig& net, const SearchHyper& hyper, Rng& init);

  // Noise-free subgraph: per-edge argmax of the current logits (ties -> lowest).
  SubgraphSample argmax_subgraph() const;

  float omega_step(marl::ReplayBuffer& buf, double tau, Rng& rng,
                   const marl::CalibrateFn& calib = nullptr);
  float alpha_step(marl::ReplayBuffer& buf, double tau, Rng& rng,
                   const marl::CalibrateFn& calib = nullptr);

  struct PairStats {
    float omega_loss = 0;
    float alpha_loss = 0;
  };
  // One weight step then one architecture step; EmptyBuffer unless the buffer
  // holds at least two batches.
  PairStats alternating_update(marl::ReplayBuffer& buf, double tau, Rng& rng,
                               const marl::CalibrateFn& calib = nullptr);

  // Greedy Q readout on a fixed subgraph with running batch statistics.
  std::array<int, kNumAgents> greedy_actions(const nn::TensorF& obs, const SubgraphSample& s,
                                             const marl::CalibrateFn& calib = nullptr);

  const NetConfig& net() const { return net_; }
  const SearchHyper& hyper() const { return hyper_; }
  nn::ParamStore& weights() { return weights_; }
  nn::ParamStore& target() { return target_; }
  nn::ParamStore& alphas() { return alphas_; }
  std::int64_t iters() const { return iters_; }

 private:
  NetConfig net_;
  SearchHyper hyper_;
  nn::ParamStore weights_;
  nn::ParamStore target_;
  nn::ParamStore alphas_;
  nn::Adam opt_w_;
  nn::Adam opt_a_;
  std::int64_t iters_ = 0;  // completed weight steps
};

}  // namespace planeloc::nas
