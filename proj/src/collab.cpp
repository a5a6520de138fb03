#include "planeloc/collab.hpp"

#include <cmath>

#include "planeloc/errors.hpp"

namespace planeloc::collab {

using nn::Graph;
using nn::ParamStore;

std::vector<CalibParamSpec> calib_param_specs(const CalibConfig& cfg) {
  if (cfg.hidden < 1 || cfg.layers < 1) throw InvalidConfig("calibrator: bad lstm geometry");
  std::vector<CalibParamSpec> out;
  const int gates = 4 * cfg.hidden;
  for (int layer = 0; layer < cfg.layers; ++layer) {
    const int in = layer == 0 ? nas::kNumActions : 2 * cfg.hidden;
    const std::string base = "collab.l" + std::to_string(layer) + ".";
    for (const char* dir : {"fw.", "bw."}) {
      out.push_back({base + dir + "w_ih", {gates, in}, true});
      out.push_back({base + dir + "w_hh", {gates, cfg.hidden}, true});
      out.push_back({base + dir + "b_ih", {gates}, false});
      out.push_back({base + dir + "b_hh", {gates}, false});
    }
  }
  out.push_back({"collab.proj.w", {nas::kNumActions, 2 * cfg.hidden}, false});
  out.push_back({"collab.proj.b", {nas::kNumActions}, false});
  return out;
}

void create_calib_params(ParamStore& w, const CalibConfig& cfg, Rng& init) {
  for (const auto& spec : calib_param_specs(cfg)) {
    auto& p = w.create(spec.name, spec.shape);
    if (spec.weight) {
      Rng r = init.split(spec.name);
      nn::fill_normal(p.value, r, 1.0 / std::sqrt(static_cast<double>(cfg.hidden)));
    }
  }
}

std::array<Graph::Id, nas::kNumAgents> calibrate(
    Graph& g, ParamStore& w, const CalibConfig& cfg,
    const std::array<Graph::Id, nas::kNumAgents>& q) {
  std::vector<Graph::Id> theta;
  for (const auto& spec : calib_param_specs(cfg)) {
    auto* p = w.find(spec.name);
    if (!p || p->value.shape != spec.shape) {
      throw NameOrShapeMismatch("calibrator parameter missing or misshapen: " + spec.name);
    }
    theta.push_back(g.param(*p));
  }
  return calibrate_nodes(g, theta, cfg, q);
}

marl::CalibrateFn make_calibrate_fn(ParamStore& w, const CalibConfig& cfg) {
  return [&w, cfg](Graph& g, const std::array<Graph::Id, nas::kNumAgents>& q) {
    return calibrate(g, w, cfg, q);
  };
}

CollabTrainer::CollabTrainer(train::DerivedTrainer& base, const CalibConfig& cfg,
                             const train::LoopConfig& loop, bool joint, Rng& init)
    : base_(base),
      cfg_(cfg),
      gamma_(loop.gamma),
      batch_(loop.batch_size),
      sync_(loop.target_sync),
      joint_(joint),
      opt_theta_(loop.lr),
      opt_trunk_(loop.lr) {
  create_calib_params(theta_, cfg_, init);
}

float CollabTrainer::omega_step(marl::ReplayBuffer& buf, Rng& rng) {
  const auto idx = buf.sample_proportional(static_cast<std::size_t>(batch_), rng);
  std::vector<const marl::Transition*> batch;
  batch.reserve(idx.size());
  for (auto i : idx) batch.push_back(&buf.at(i));

  marl::ForwardFn online = [this](Graph& g, Graph::Id obs, const nas::ForwardOpt& o) {
    return nas::derived_forward(g, base_.online(), base_.net(), base_.arch(), obs, o);
  };
  marl::ForwardFn tgt = [this](Graph& g, Graph::Id obs, const nas::ForwardOpt& o) {
    return nas::derived_forward(g, base_.target(), base_.net(), base_.arch(), obs, o);
  };

  Graph g;
  nas::ForwardOpt lo;
  lo.phase = joint_ ? nas::BnPhase::kTrain : nas::BnPhase::kEval;
  lo.weights_as_params = joint_;
  const auto res = marl::ddqn_loss(g, batch, online, tgt, gamma_, lo, calibrate_fn());
  g.backward(res.loss);
  opt_theta_.step(theta_);
  if (joint_) opt_trunk_.step(base_.online());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    buf.update_priority(idx[i], std::abs(res.td[i]) + 1e-3f);
  }
  ++iters_;
  if (joint_ && sync_ > 0 && iters_ % sync_ == 0) base_.sync_target();
  return g.val(res.loss).v[0];
}

std::vector<train::EpochLog> train_calibrator(CollabTrainer& tr,
                                              const std::vector<const phantom::Phantom*>& tv,
                                              const std::vector<const phantom::Phantom*>& vv,
                                              const phantom::Atlas& atlas,
                                              const train::LoopConfig& cfg, Rng& rng) {
  if (tv.empty() || vv.empty()) throw InvalidConfig("train_calibrator: empty volume set");
  if (cfg.epochs < 1) throw InvalidConfig("train_calibrator: epochs must be positive");
  std::vector<train::EpochLog> log;
  const std::int64_t total_iters = static_cast<std::int64_t>(cfg.epochs) *
                                   static_cast<std::int64_t>(tv.size()) *
                                   cfg.grad_steps_per_episode;
  marl::ReplayBuffer buf(cfg.replay_capacity, cfg.replay_exponent);
  const Rng val_rng = rng.split("validation");
  Rng loop_rng = rng.split("collab-loop");

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_acc = 0;
    int loss_n = 0;
    for (const auto* ph : tv) {
      const auto start = phantom::warm_start(*ph, phantom::WarmStartMode::kTrainNoise, cfg.warm,
                                             nullptr, loop_rng);
      const double eps = nas::epsilon_at(tr.iters(), total_iters, cfg.eps_hi, cfg.eps_lo);
      train::run_episode(*ph, marl::EnvMode::kTrain, start, tr.q_reader(), eps, loop_rng,
                         cfg.env, &buf, nullptr);
      for (int gstep = 0; gstep < cfg.grad_steps_per_episode; ++gstep) {
        if (buf.size() < static_cast<std::size_t>(cfg.batch_size)) break;
        loss_acc += tr.omega_step(buf, loop_rng);
        ++loss_n;
      }
    }
    Rng vr = val_rng;
    const auto vs = train::validate(vv, atlas, tr.q_reader(), cfg.env, cfg.warm, vr);
    log.push_back({epoch, vs.reward_sum, vs.mean_ang_deg, vs.mean_dis_mm,
                   loss_n ? loss_acc / loss_n : 0.0});
  }
  return log;
}

}  // namespace planeloc::collab
