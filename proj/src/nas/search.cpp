#include "planeloc/nas/search.hpp"

#include <cmath>
#include <vector>

#include "planeloc/errors.hpp"

namespace planeloc::nas {

using nn::Graph;
using nn::ParamStore;

double linear_schedule(double start, double end, std::int64_t step, std::int64_t total) {
  if (step <= 0) return total > 0 ? start : end;
  if (step >= total) return end;
  return start + (end - start) * static_cast<double>(step) / static_cast<double>(total);
}

double epsilon_at(std::int64_t iter, std::int64_t total_iters, double eps_hi, double eps_lo) {
  return linear_schedule(eps_hi, eps_lo, iter, total_iters / 2);
}

SupernetTrainer::SupernetTrainer(const NetConfig& net, const SearchHyper& hyper, Rng& init)
    : net_(net), hyper_(hyper), opt_w_(hyper.lr_omega), opt_a_(hyper.lr_alpha) {
  create_supernet_params(weights_, net_, init);
  create_supernet_params(target_, net_, init);
  target_.copy_values_from(weights_);
  create_alpha_params(alphas_);
}

SubgraphSample SupernetTrainer::argmax_subgraph() const {
  SubgraphSample s;
  s.tau = 1.0;
  for (int t = 0; t < kNumTables; ++t) {
    for (int e = 0; e < kEdgeCount; ++e) {
      const auto* row = alphas_.find(alpha_param_name(t, e));
      int k_star = 0;
      float best = 0;
      for (int k = 0; k < kNumOps; ++k) {
        const float z = row->value.v[static_cast<std::size_t>(k)];
        if (k == 0 || z > best) {
          best = z;
          k_star = k;
        }
      }
      s.tables[static_cast<std::size_t>(t)].k[static_cast<std::size_t>(e)] = k_star;
      s.tables[static_cast<std::size_t>(t)].st[static_cast<std::size_t>(e)] = -1;
    }
  }
  return s;
}

namespace {

std::vector<const marl::Transition*> gather(const marl::ReplayBuffer& buf,
                                            const std::vector<std::size_t>& idx) {
  std::vector<const marl::Transition*> b;
  b.reserve(idx.size());
  for (auto i : idx) b.push_back(&buf.at(i));
  return b;
}

}  // namespace

float SupernetTrainer::omega_step(marl::ReplayBuffer& buf, double tau, Rng& rng,
                                  const marl::CalibrateFn& calib) {
  SubgraphSample s = sample_subgraph(alphas_, tau, rng);
  const auto idx = buf.sample_proportional(static_cast<std::size_t>(hyper_.batch_size), rng);
  const auto batch = gather(buf, idx);

  marl::ForwardFn online = [this, &s](Graph& g, Graph::Id obs, const ForwardOpt& o) {
    return supernet_forward(g, weights_, net_, s, obs, o);
  };
  marl::ForwardFn tgt = [this, &s](Graph& g, Graph::Id obs, const ForwardOpt& o) {
    return supernet_forward(g, target_, net_, s, obs, o);
  };

  Graph g;
  ForwardOpt lo;
  lo.phase = BnPhase::kTrain;
  lo.weights_as_params = true;
  const auto res = marl::ddqn_loss(g, batch, online, tgt, hyper_.gamma, lo, calib);
  g.backward(res.loss);
  opt_w_.step(weights_);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    buf.update_priority(idx[i], std::abs(res.td[i]) + 1e-3f);
  }
  ++iters_;
  if (hyper_.target_sync > 0 && iters_ % hyper_.target_sync == 0) {
    target_.copy_values_from(weights_);
  }
  return g.val(res.loss).v[0];
}

float SupernetTrainer::alpha_step(marl::ReplayBuffer& buf, double tau, Rng& rng,
                                  const marl::CalibrateFn& calib) {
  SubgraphSample s = sample_subgraph(alphas_, tau, rng);
  const auto idx = buf.sample_uniform(static_cast<std::size_t>(hyper_.batch_size), rng);
  const auto batch = gather(buf, idx);

  // The recording pass runs with straight-through gates attached so the loss
  // reaches the logits; the bootstrap passes reuse the same subgraph plain.
  marl::ForwardFn online = [this, &s](Graph& g, Graph::Id obs, const ForwardOpt& o) {
    if (o.phase == BnPhase::kTrainFrozen) {
      SubgraphSample gated = s;
      attach_alpha_nodes(g, alphas_, gated, false);
      return supernet_forward(g, weights_, net_, gated, obs, o);
    }
    return supernet_forward(g, weights_, net_, s, obs, o);
  };
  marl::ForwardFn tgt = [this, &s](Graph& g, Graph::Id obs, const ForwardOpt& o) {
    return supernet_forward(g, target_, net_, s, obs, o);
  };

  Graph g;
  ForwardOpt lo;
  lo.phase = BnPhase::kTrainFrozen;
  lo.weights_as_params = false;
  const auto res = marl::ddqn_loss(g, batch, online, tgt, hyper_.gamma, lo, calib);
  g.backward(res.loss);
  opt_a_.step(alphas_);
  return g.val(res.loss).v[0];
}

SupernetTrainer::PairStats SupernetTrainer::alternating_update(marl::ReplayBuffer& buf, double tau,
                                                               Rng& rng,
                                                               const marl::CalibrateFn& calib) {
  if (buf.size() < 2 * static_cast<std::size_t>(hyper_.batch_size)) {
    throw EmptyBuffer("alternating update needs two batches, have " +
                      std::to_string(buf.size()));
  }
  PairStats out;
  out.omega_loss = omega_step(buf, tau, rng, calib);
  out.alpha_loss = alpha_step(buf, tau, rng, calib);
  return out;
}

std::array<int, kNumAgents> SupernetTrainer::greedy_actions(const nn::TensorF& obs,
                                                            const SubgraphSample& s,
                                                            const marl::CalibrateFn& calib) {
  Graph g(false);
  nn::TensorF batched = obs;
  batched.shape.insert(batched.shape.begin(), 1);
  auto q = supernet_forward(g, weights_, net_, s, g.input(std::move(batched)), ForwardOpt{});
  if (calib) q = calib(g, q);
  std::array<int, kNumAgents> acts{};
  for (int a = 0; a < kNumAgents; ++a) {
    const auto& row = g.val(q[a]).v;
    int best = 0;
    for (int k = 1; k < net_.actions; ++k) {
      if (row[static_cast<std::size_t>(k)] > row[static_cast<std::size_t>(best)]) best = k;
    }
    acts[static_cast<std::size_t>(a)] = best;
  }
  return acts;
}

}  // namespace planeloc::nas
