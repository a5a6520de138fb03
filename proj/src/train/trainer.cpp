#include "planeloc/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "planeloc/errors.hpp"

namespace planeloc::train {

using marl::EnvMode;
using marl::EnvState;
using nn::Graph;
using nn::TensorF;

namespace {

int greedy_of(const std::array<float, nas::kNumActions>& row) {
  int best = 0;
  for (int k = 1; k < nas::kNumActions; ++k) {
    if (row[static_cast<std::size_t>(k)] > row[static_cast<std::size_t>(best)]) best = k;
  }
  return best;
}

float max_of(const std::array<float, nas::kNumActions>& row) {
  float m = row[0];
  for (float v : row) m = std::max(m, v);
  return m;
}

void record_row(metrics::StepTrace& trace, const EnvState& s,
                const std::array<std::array<float, nas::kNumActions>, nas::kNumAgents>& q) {
  std::array<double, 3> ang{}, dis{}, qm{};
  for (int a = 0; a < marl::kAgents; ++a) {
    const auto& cur = s.history[static_cast<std::size_t>(a)][marl::kHistory - 1];
    const auto& gt = s.vol->gt_planes[static_cast<std::size_t>(a)];
    ang[static_cast<std::size_t>(a)] = metrics::ang_deg(cur, gt);
    dis[static_cast<std::size_t>(a)] = metrics::dis_mm(cur, gt);
    qm[static_cast<std::size_t>(a)] = max_of(q[static_cast<std::size_t>(a)]);
  }
  trace.ang.push_back(ang);
  trace.dis.push_back(dis);
  trace.q_max.push_back(qm);
}

}  // namespace

double run_episode(const phantom::Phantom& ph, EnvMode mode,
                   const std::array<geom::PlaneParams, 3>& start, const QFn& q, double eps,
                   Rng& rng, const marl::EnvConfig& ec, marl::ReplayBuffer* buf,
                   metrics::StepTrace* trace, EnvState* final_state) {
  EnvState s = marl::reset(ph, mode, start);
  double reward_sum = 0;
  TensorF obs = marl::observe(s, ec);
  while (!marl::is_terminal(s, s.mode)) {
    const auto qv = q(obs);
    if (trace) record_row(*trace, s, qv);
    std::array<int, marl::kAgents> acts{};
    for (int a = 0; a < marl::kAgents; ++a) {
      if (eps > 0 && rng.bernoulli(eps)) {
        acts[static_cast<std::size_t>(a)] = static_cast<int>(rng.next_int(nas::kNumActions));
      } else {
        acts[static_cast<std::size_t>(a)] = greedy_of(qv[static_cast<std::size_t>(a)]);
      }
    }
    const auto rewards = marl::step(s, acts, ec);
    TensorF next = marl::observe(s, ec);
    for (int r : rewards) reward_sum += r;
    if (buf) {
      marl::Transition t;
      t.obs = obs;
      t.next_obs = next;
      t.actions = acts;
      for (int a = 0; a < marl::kAgents; ++a) {
        t.rewards[static_cast<std::size_t>(a)] =
            static_cast<float>(rewards[static_cast<std::size_t>(a)]);
      }
      t.terminal = marl::is_terminal(s, s.mode);
      buf->push(std::move(t));
    }
    obs = std::move(next);
  }
  if (trace) record_row(*trace, s, q(obs));
  if (final_state) *final_state = s;
  return reward_sum;
}

ValStats validate(const std::vector<const phantom::Phantom*>& vols, const phantom::Atlas& atlas,
                  const QFn& q, const marl::EnvConfig& ec, const phantom::WarmStartConfig& wc,
                  Rng& rng) {
  if (vols.empty()) throw InvalidConfig("validate: no volumes");
  ValStats out;
  int n = 0;
  for (const auto* ph : vols) {
    const auto start = phantom::warm_start(*ph, phantom::WarmStartMode::kAlign, wc, &atlas, rng);
    metrics::StepTrace trace;
    out.reward_sum += run_episode(*ph, EnvMode::kEval, start, q, 0.0, rng, ec, nullptr, &trace);
    for (int p = 0; p < 3; ++p) {
      out.mean_ang_deg += trace.ang.back()[static_cast<std::size_t>(p)];
      out.mean_dis_mm += trace.dis.back()[static_cast<std::size_t>(p)];
      ++n;
    }
  }
  out.mean_ang_deg /= n;
  out.mean_dis_mm /= n;
  return out;
}

void write_train_log(const std::string& path, const std::vector<EpochLog>& rows) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << "epoch,val_reward_sum,mean_ang_deg,mean_dis_mm,loss\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f\n", r.epoch, r.val_reward_sum,
                  r.mean_ang_deg, r.mean_dis_mm, r.loss);
    f << buf;
  }
  if (!f) throw IoError("failed writing " + path);
}

DerivedTrainer::DerivedTrainer(const nas::NetConfig& net, const nas::DiscreteArch& arch,
                               const LoopConfig& cfg, Rng& init)
    : net_(net),
      arch_(arch),
      gamma_(cfg.gamma),
      batch_(cfg.batch_size),
      sync_(cfg.target_sync),
      opt_(cfg.lr) {
  nas::create_derived_params(online_, net_, arch_, init);
  nas::create_derived_params(target_, net_, arch_, init);
  target_.copy_values_from(online_);
}

float DerivedTrainer::omega_step(marl::ReplayBuffer& buf, Rng& rng,
                                 const marl::CalibrateFn& calib) {
  const auto idx = buf.sample_proportional(static_cast<std::size_t>(batch_), rng);
  std::vector<const marl::Transition*> batch;
  batch.reserve(idx.size());
  for (auto i : idx) batch.push_back(&buf.at(i));

  marl::ForwardFn online = [this](Graph& g, Graph::Id obs, const nas::ForwardOpt& o) {
    return nas::derived_forward(g, online_, net_, arch_, obs, o);
  };
  marl::ForwardFn tgt = [this](Graph& g, Graph::Id obs, const nas::ForwardOpt& o) {
    return nas::derived_forward(g, target_, net_, arch_, obs, o);
  };

  Graph g;
  nas::ForwardOpt lo;
  lo.phase = nas::BnPhase::kTrain;
  lo.weights_as_params = true;
  const auto res = marl::ddqn_loss(g, batch, online, tgt, gamma_, lo, calib);
  g.backward(res.loss);
  opt_.step(online_);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    buf.update_priority(idx[i], std::abs(res.td[i]) + 1e-3f);
  }
  ++iters_;
  if (sync_ > 0 && iters_ % sync_ == 0) sync_target();
  return g.val(res.loss).v[0];
}

QFn DerivedTrainer::q_reader(const marl::CalibrateFn& calib) {
  return [this, calib](const TensorF& obs) {
    Graph g(false);
    TensorF batched = obs;
    batched.shape.insert(batched.shape.begin(), 1);
    auto q = nas::derived_forward(g, online_, net_, arch_, g.input(std::move(batched)),
                                  nas::ForwardOpt{});
    if (calib) q = calib(g, q);
    std::array<std::array<float, nas::kNumActions>, nas::kNumAgents> out{};
    for (int a = 0; a < nas::kNumAgents; ++a) {
      const auto& v = g.val(q[static_cast<std::size_t>(a)]).v;
      for (int k = 0; k < nas::kNumActions; ++k) {
        out[static_cast<std::size_t>(a)][static_cast<std::size_t>(k)] =
            v[static_cast<std::size_t>(k)];
      }
    }
    return out;
  };
}

namespace {

QFn supernet_reader(nas::SupernetTrainer& tr, const nas::SubgraphSample& s) {
  return [&tr, s](const TensorF& obs) {
    Graph g(false);
    TensorF batched = obs;
    batched.shape.insert(batched.shape.begin(), 1);
    auto q = nas::supernet_forward(g, tr.weights(), tr.net(), s, g.input(std::move(batched)),
                                   nas::ForwardOpt{});
    std::array<std::array<float, nas::kNumActions>, nas::kNumAgents> out{};
    for (int a = 0; a < nas::kNumAgents; ++a) {
      const auto& v = g.val(q[static_cast<std::size_t>(a)]).v;
      for (int k = 0; k < nas::kNumActions; ++k) {
        out[static_cast<std::size_t>(a)][static_cast<std::size_t>(k)] =
            v[static_cast<std::size_t>(k)];
      }
    }
    return out;
  };
}

}  // namespace

SearchResult run_search(nas::SupernetTrainer& tr, const std::vector<const phantom::Phantom*>& tv,
                        const std::vector<const phantom::Phantom*>& vv,
                        const phantom::Atlas& atlas, const LoopConfig& cfg, Rng& rng) {
  if (tv.empty() || vv.empty()) throw InvalidConfig("run_search: empty volume set");
  if (cfg.epochs < 1) throw InvalidConfig("run_search: epochs must be positive");
  SearchResult out;
  const auto& hy = tr.hyper();
  const std::int64_t total_pairs = static_cast<std::int64_t>(cfg.epochs) *
                                   static_cast<std::int64_t>(tv.size()) *
                                   cfg.grad_steps_per_episode;
  marl::ReplayBuffer buf(cfg.replay_capacity, cfg.replay_exponent);
  const Rng val_rng = rng.split("validation");  // identical warm starts per epoch
  Rng loop_rng = rng.split("search-loop");

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double tau = nas::linear_schedule(hy.tau_start, hy.tau_end, epoch,
                                            std::max(1, cfg.epochs - 1));
    double loss_acc = 0;
    int loss_n = 0;
    for (const auto* ph : tv) {
      const auto start =
          phantom::warm_start(*ph, phantom::WarmStartMode::kTrainNoise, cfg.warm, nullptr,
                              loop_rng);
      const auto sample = nas::sample_subgraph(tr.alphas(), tau, loop_rng);
      const double eps = nas::epsilon_at(tr.iters(), total_pairs, cfg.eps_hi, cfg.eps_lo);
      run_episode(*ph, EnvMode::kTrain, start, supernet_reader(tr, sample), eps, loop_rng,
                  cfg.env, &buf, nullptr);
      for (int gstep = 0; gstep < cfg.grad_steps_per_episode; ++gstep) {
        if (buf.size() < 2 * static_cast<std::size_t>(hy.batch_size)) break;
        const auto stats = tr.alternating_update(buf, tau, loop_rng);
        loss_acc += stats.omega_loss;
        ++loss_n;
      }
    }
    Rng vr = val_rng;
    const ValStats vs =
        validate(vv, atlas, supernet_reader(tr, tr.argmax_subgraph()), cfg.env, cfg.warm, vr);
    auto alpha_copy = std::make_unique<nn::ParamStore>();
    nas::create_alpha_params(*alpha_copy);
    alpha_copy->copy_values_from(tr.alphas());
    out.alpha_history.push_back(std::move(alpha_copy));
    out.val_reward_sums.push_back(vs.reward_sum);
    out.log.push_back({epoch, vs.reward_sum, vs.mean_ang_deg, vs.mean_dis_mm,
                       loss_n ? loss_acc / loss_n : 0.0});
  }
  out.best_epoch = nas::select_best_alpha(out.val_reward_sums);
  return out;
}

std::vector<EpochLog> run_train(DerivedTrainer& tr,
                                const std::vector<const phantom::Phantom*>& tv,
                                const std::vector<const phantom::Phantom*>& vv,
                                const phantom::Atlas& atlas, const LoopConfig& cfg, Rng& rng,
                                const marl::CalibrateFn& calib) {
  if (tv.empty() || vv.empty()) throw InvalidConfig("run_train: empty volume set");
  if (cfg.epochs < 1) throw InvalidConfig("run_train: epochs must be positive");
  std::vector<EpochLog> log;
  const std::int64_t total_iters = static_cast<std::int64_t>(cfg.epochs) *
                                   static_cast<std::int64_t>(tv.size()) *
                                   cfg.grad_steps_per_episode;
  marl::ReplayBuffer buf(cfg.replay_capacity, cfg.replay_exponent);
  const Rng val_rng = rng.split("validation");
  Rng loop_rng = rng.split("train-loop");

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_acc = 0;
    int loss_n = 0;
    for (const auto* ph : tv) {
      const auto start =
          phantom::warm_start(*ph, phantom::WarmStartMode::kTrainNoise, cfg.warm, nullptr,
                              loop_rng);
      const double eps = nas::epsilon_at(tr.iters(), total_iters, cfg.eps_hi, cfg.eps_lo);
      run_episode(*ph, EnvMode::kTrain, start, tr.q_reader(calib), eps, loop_rng, cfg.env, &buf,
                  nullptr);
      for (int gstep = 0; gstep < cfg.grad_steps_per_episode; ++gstep) {
        if (buf.size() < static_cast<std::size_t>(cfg.batch_size)) break;
        loss_acc += tr.omega_step(buf, loop_rng, calib);
        ++loss_n;
      }
    }
    Rng vr = val_rng;
    const ValStats vs = validate(vv, atlas, tr.q_reader(calib), cfg.env, cfg.warm, vr);
    log.push_back({epoch, vs.reward_sum, vs.mean_ang_deg, vs.mean_dis_mm,
                   loss_n ? loss_acc / loss_n : 0.0});
  }
  return log;
}

EvalOutput evaluate(const QFn& q, const std::vector<const phantom::Phantom*>& vols,
                    const phantom::Atlas& atlas, const marl::EnvConfig& ec,
                    const phantom::WarmStartConfig& wc, Rng& rng) {
  if (vols.empty()) throw InvalidConfig("evaluate: no volumes");
  EvalOutput out;
  for (const auto* ph : vols) {
    const auto start = phantom::warm_start(*ph, phantom::WarmStartMode::kAlign, wc, &atlas, rng);
    metrics::StepTrace trace;
    EnvState fin;
    run_episode(*ph, EnvMode::kEval, start, q, 0.0, rng, ec, nullptr, &trace, &fin);

    metrics::VolumeRow row;
    row.id = "vol" + std::to_string(ph->seed);
    for (int p = 0; p < 3; ++p) {
      const auto& pred = fin.history[static_cast<std::size_t>(p)][marl::kHistory - 1];
      const auto& gt = ph->gt_planes[static_cast<std::size_t>(p)];
      row.ang[static_cast<std::size_t>(p)] = trace.ang.back()[static_cast<std::size_t>(p)];
      row.dis[static_cast<std::size_t>(p)] = trace.dis.back()[static_cast<std::size_t>(p)];
      const auto a = geom::extract_slice(ph->vol, pred, ec.obs_h, ec.obs_w, ec.pixel_spacing_mm);
      const auto b = geom::extract_slice(ph->vol, gt, ec.obs_h, ec.obs_w, ec.pixel_spacing_mm);
      row.ssim[static_cast<std::size_t>(p)] = metrics::ssim(a, b);
    }
    out.rows.push_back(std::move(row));
    out.traces.push_back(std::move(trace));
  }
  return out;
}

}  // namespace planeloc::train
