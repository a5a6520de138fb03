#include "planeloc/marl/ddqn.hpp"

#include <string>

namespace planeloc::marl {

using nn::Graph;
using nn::TensorF;

nn::TensorF stack_obs(const std::vector<const Transition*>& batch, bool next) {
  const TensorF& first = next ? batch.front()->next_obs : batch.front()->obs;
  std::vector<int> shape{static_cast<int>(batch.size())};
  shape.insert(shape.end(), first.shape.begin(), first.shape.end());
  TensorF out(shape);
  const std::size_t item = first.size();
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const TensorF& src = next ? batch[n]->next_obs : batch[n]->obs;
    if (src.shape != first.shape) {
      throw ShapeMismatch("transition observations disagree: " + nn::shape_str(src.shape) +
                          " vs " + nn::shape_str(first.shape));
    }
    std::copy(src.v.begin(), src.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(n * item));
  }
  return out;
}

DdqnResult ddqn_loss(Graph& g, const std::vector<const Transition*>& batch,
                     const ForwardFn& online, const ForwardFn& target, double gamma,
                     const nas::ForwardOpt& loss_opt, const CalibrateFn& calib) {
  if (batch.empty()) throw EmptyBatch("ddqn loss needs at least one transition");
  if (gamma < 0 || gamma >= 1) {
    throw InvalidConfig("discount must lie in [0,1), got " + std::to_string(gamma));
  }
  const int n = static_cast<int>(batch.size());

  // next-state passes carry no gradients and use running norm stats
  nas::ForwardOpt eval_opt;
  Graph scratch(false);
  auto next_in = scratch.input(stack_obs(batch, true));
  auto q_sel = online(scratch, next_in, eval_opt);
  auto q_tgt = target(scratch, next_in, eval_opt);
  if (calib) {
    q_sel = calib(scratch, q_sel);
    q_tgt = calib(scratch, q_tgt);
  }

  std::array<TensorF, kAgents> y;
  for (int a = 0; a < kAgents; ++a) {
    const TensorF& sel = scratch.val(q_sel[static_cast<std::size_t>(a)]);
    const TensorF& tgt = scratch.val(q_tgt[static_cast<std::size_t>(a)]);
    const int actions = sel.shape[1];
    TensorF ya({n});
    for (int i = 0; i < n; ++i) {
      float yi = batch[static_cast<std::size_t>(i)]->rewards[static_cast<std::size_t>(a)];
      if (!batch[static_cast<std::size_t>(i)]->terminal) {
        int astar = 0;
        for (int k = 1; k < actions; ++k) {
          if (sel.v[static_cast<std::size_t>(i * actions + k)] >
              sel.v[static_cast<std::size_t>(i * actions + astar)]) {
            astar = k;
          }
        }
        yi += static_cast<float>(gamma) *
              tgt.v[static_cast<std::size_t>(i * actions + astar)];
      }
      ya.v[static_cast<std::size_t>(i)] = yi;
    }
    y[static_cast<std::size_t>(a)] = std::move(ya);
  }

  auto obs_in = g.input(stack_obs(batch, false));
  auto q = online(g, obs_in, loss_opt);
  if (calib) q = calib(g, q);

  DdqnResult r;
  r.td.assign(static_cast<std::size_t>(n), 0.0f);
  std::vector<Graph::Id> agent_means;
  for (int a = 0; a < kAgents; ++a) {
    std::vector<int> acts(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      acts[static_cast<std::size_t>(i)] =
          batch[static_cast<std::size_t>(i)]->actions[static_cast<std::size_t>(a)];
    }
    auto sel = g.select_col(q[static_cast<std::size_t>(a)], acts);
    const TensorF& sel_v = g.val(sel);
    for (int i = 0; i < n; ++i) {
      r.td[static_cast<std::size_t>(i)] +=
          (y[static_cast<std::size_t>(a)].v[static_cast<std::size_t>(i)] -
           sel_v.v[static_cast<std::size_t>(i)]) /
          static_cast<float>(kAgents);
    }
    auto diff = g.sub(sel, g.input(y[static_cast<std::size_t>(a)]));
    agent_means.push_back(g.reduce_mean(g.mul(diff, diff)));
  }
  r.loss = g.scale(g.add_all(agent_means), 1.0 / kAgents);
  return r;
}

}  // namespace planeloc::marl
