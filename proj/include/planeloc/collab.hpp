#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "planeloc/marl/ddqn.hpp"
#include "planeloc/nn/graph.hpp"
#include "planeloc/nn/params.hpp"
#include "planeloc/rng.hpp"
#include "planeloc/train/trainer.hpp"

namespace planeloc::collab {

struct CalibConfig {
  int hidden = 64;
  int layers = 2;
};

// Canonical parameter list: per layer fw then bw (w_ih, w_hh, b_ih, b_hh),
// then the shared output projection (w, b). All names carry the "collab."
// prefix so calibrator checkpoints coexist with trunk ones.
struct CalibParamSpec {
  std::string name;
  std::vector<int> shape;
  bool weight = false;  // weights draw random values; biases and the projection stay zero
};
std::vector<CalibParamSpec> calib_param_specs(const CalibConfig& cfg);

void create_calib_params(nn::ParamStore& w, const CalibConfig& cfg, Rng& init);

// Core pass over explicit parameter nodes (calib_param_specs order): the three
// q rows {N,8} form a sequence in plane order, each layer runs a forward and a
// backward LSTM over it and hands the concatenated states {N,2H} to the next,
// and a single linear head turns every position into a residual correction.
template <class T>
std::array<typename nn::GraphT<T>::Id, nas::kNumAgents> calibrate_nodes(
    nn::GraphT<T>& g, const std::vector<typename nn::GraphT<T>::Id>& theta,
    const CalibConfig& cfg,
    const std::array<typename nn::GraphT<T>::Id, nas::kNumAgents>& q) {
  using Id = typename nn::GraphT<T>::Id;
  if (cfg.hidden < 1 || cfg.layers < 1) throw InvalidConfig("calibrate: bad lstm geometry");
  if (theta.size() != static_cast<std::size_t>(8 * cfg.layers + 2)) {
    throw ShapeMismatch("calibrate: expected " + std::to_string(8 * cfg.layers + 2) +
                        " parameter nodes, got " + std::to_string(theta.size()));
  }
  const auto& q0 = g.val(q[0]);
  if (q0.rank() != 2 || q0.dim(1) != nas::kNumActions) {
    throw ShapeMismatch("calibrate: rows must be {N," + std::to_string(nas::kNumActions) +
                        "}, got " + nn::shape_str(q0.shape));
  }
  for (const auto id : q) {
    if (g.val(id).shape != q0.shape) {
      throw ShapeMismatch("calibrate: row shapes disagree: " + nn::shape_str(g.val(id).shape) +
                          " vs " + nn::shape_str(q0.shape));
    }
  }
  const int n = q0.dim(0);

  std::array<Id, nas::kNumAgents> xs = q;
  std::size_t ti = 0;
  for (int layer = 0; layer < cfg.layers; ++layer) {
    const Id wif = theta[ti], whf = theta[ti + 1], bif = theta[ti + 2], bhf = theta[ti + 3];
    const Id wib = theta[ti + 4], whb = theta[ti + 5], bib = theta[ti + 6], bhb = theta[ti + 7];
    ti += 8;
    std::array<Id, nas::kNumAgents> hf{}, hb{};
    Id h = g.input(nn::TensorT<T>({n, cfg.hidden}));
    Id c = g.input(nn::TensorT<T>({n, cfg.hidden}));
    for (int t = 0; t < nas::kNumAgents; ++t) {
      std::tie(h, c) = nn::lstm_cell(g, xs[static_cast<std::size_t>(t)], h, c, wif, whf, bif,
                                     bhf, cfg.hidden);
      hf[static_cast<std::size_t>(t)] = h;
    }
    h = g.input(nn::TensorT<T>({n, cfg.hidden}));
    c = g.input(nn::TensorT<T>({n, cfg.hidden}));
    for (int t = nas::kNumAgents - 1; t >= 0; --t) {
      std::tie(h, c) = nn::lstm_cell(g, xs[static_cast<std::size_t>(t)], h, c, wib, whb, bib,
                                     bhb, cfg.hidden);
      hb[static_cast<std::size_t>(t)] = h;
    }
    for (int t = 0; t < nas::kNumAgents; ++t) {
      xs[static_cast<std::size_t>(t)] =
          g.concat({hf[static_cast<std::size_t>(t)], hb[static_cast<std::size_t>(t)]}, 1);
    }
  }
  const Id pw = theta[ti], pb = theta[ti + 1];
  std::array<Id, nas::kNumAgents> out{};
  for (int t = 0; t < nas::kNumAgents; ++t) {
    out[static_cast<std::size_t>(t)] =
        g.add(q[static_cast<std::size_t>(t)], g.linear(xs[static_cast<std::size_t>(t)], pw, pb));
  }
  return out;
}

// Store-backed entry point; in a recording graph the parameters train, in a
// scratch graph they read as plain values.
std::array<nn::Graph::Id, nas::kNumAgents> calibrate(
    nn::Graph& g, nn::ParamStore& w, const CalibConfig& cfg,
    const std::array<nn::Graph::Id, nas::kNumAgents>& q);

marl::CalibrateFn make_calibrate_fn(nn::ParamStore& w, const CalibConfig& cfg);

// Stage-2 trainer: DDQN loss on calibrated heads, trunk parameters and norm
// buffers untouched (eval-phase reads), only calibrator parameters step.
// joint unfreezes the trunk: train-phase reads, a second optimizer over the
// trunk store, and periodic target refreshes.
class CollabTrainer {
 public:
  CollabTrainer(train::DerivedTrainer& base, const CalibConfig& cfg,
                const train::LoopConfig& loop, bool joint, Rng& init);

  float omega_step(marl::ReplayBuffer& buf, Rng& rng);
  train::QFn q_reader() { return base_.q_reader(calibrate_fn()); }
  marl::CalibrateFn calibrate_fn() { return make_calibrate_fn(theta_, cfg_); }

  train::DerivedTrainer& base() { return base_; }
  const CalibConfig& calib() const { return cfg_; }
  nn::ParamStore& theta() { return theta_; }
  bool joint() const { return joint_; }
  std::int64_t iters() const { return iters_; }

 private:
  train::DerivedTrainer& base_;
  CalibConfig cfg_;
  double gamma_;
  int batch_;
  std::int64_t sync_;
  bool joint_;
  nn::ParamStore theta_;
  nn::Adam opt_theta_;
  nn::Adam opt_trunk_;
  std::int64_t iters_ = 0;
};

// Same loop and logging contract as run_train, updating only the calibrator
// (or trunk too under the joint flag).
std::vector<train::EpochLog> train_calibrator(CollabTrainer& tr,
                                              const std::vector<const phantom::Phantom*>& tv,
                                              const std::vector<const phantom::Phantom*>& vv,
                                              const phantom::Atlas& atlas,
                                              const train::LoopConfig& cfg, Rng& rng);

}  // namespace planeloc::collab
