#pragma once

#include <array>
#include <functional>
#include <vector>

#include "planeloc/marl/replay.hpp"
#include "planeloc/nas/network.hpp"
#include "planeloc/nn/graph.hpp"

namespace planeloc::marl {

// Builds the 3 x actions Q heads for a batched observation node.
using ForwardFn = std::function<std::array<nn::Graph::Id, kAgents>(
    nn::Graph&, nn::Graph::Id obs, const nas::ForwardOpt&)>;

// Maps raw Q heads {N,actions} x3 to calibrated ones, same shapes.
using CalibrateFn = std::function<std::array<nn::Graph::Id, kAgents>(
    nn::Graph&, const std::array<nn::Graph::Id, kAgents>&)>;

struct DdqnResult {
  nn::Graph::Id loss = -1;
  std::vector<float> td;  // per item: mean over agents of (y - Q(s,a))
};

// Decoupled double-Q target: y = r + gamma * Q_target(s', argmax_a Q_online(s',a)),
// y = r at terminal.  Loss is the mean over items and agents of (y - Q)^2.
// The online pass on s runs in g under loss_opt; the two next-state passes run
// in a private non-recording graph with eval-mode normalization.  When calib
// is set every Q read goes through it first.
DdqnResult ddqn_loss(nn::Graph& g, const std::vector<const Transition*>& batch,
                     const ForwardFn& online, const ForwardFn& target, double gamma,
                     const nas::ForwardOpt& loss_opt, const CalibrateFn& calib = nullptr);

// Stacks transition observations (obs or next_obs) into {N, C, H, W}.
nn::TensorF stack_obs(const std::vector<const Transition*>& batch, bool next);

}  // namespace planeloc::marl
