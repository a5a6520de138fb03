#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "planeloc/nas/arch.hpp"
#include "planeloc/nn/graph.hpp"
#include "planeloc/nn/params.hpp"
#include "planeloc/rng.hpp"

namespace planeloc::nas {

struct NetConfig {
  int obs_channels = 9;
  int obs_h = 24;
  int obs_w = 24;
  int stem_channels = 8;
  int actions = kNumActions;
};

// Shared stack layout: reduce cells at 1/3, 2/3 and end; private stacks end
// in a single reduce.
inline constexpr int kSharedCells = 8;
inline constexpr bool kSharedReduce[kSharedCells] = {false, false, true,  false,
                                                     false, true,  false, true};
inline constexpr int kPrivateCells = 4;
inline constexpr bool kPrivateReduce[kPrivateCells] = {false, false, false, true};

// Batch-statistics policy for a forward pass: weight updates use live batch
// stats and refresh the running buffers; architecture updates use live batch
// stats with frozen buffers; everything else (rollouts, targets, eval) uses
// the running buffers.
enum class BnPhase { kTrain, kTrainFrozen, kEval };

struct ForwardOpt {
  BnPhase phase = BnPhase::kEval;
  bool weights_as_params = false;  // expose weights as trainable graph leaves
};

void create_supernet_params(nn::ParamStore& w, const NetConfig& cfg, Rng& init);
// Subset of the supernet's parameters (same names), so a supernet checkpoint
// transplants into a derived network by a plain load.
void create_derived_params(nn::ParamStore& w, const NetConfig& cfg, const DiscreteArch& arch,
                           Rng& init);

struct TableSample {
  std::array<int, kEdgeCount> k{};  // sampled op per edge
  std::array<std::array<float, kNumOps>, kEdgeCount> noise{};
  std::array<nn::Graph::Id, kEdgeCount> st{};  // -1 unless alpha attached
};

struct SubgraphSample {
  std::array<TableSample, kNumTables> tables{};
  double tau = 1.0;
  bool soft = false;
};

// One op per edge per table, each edge independently perturbed by gumbel
// noise at temperature tau. Pure value computation; no graph involvement.
SubgraphSample sample_subgraph(const nn::ParamStore& alphas, double tau, Rng& rng);

// Materialize the sample's straight-through nodes so gradients reach alpha.
// Must be called on the graph before the forward that uses the sample.
void attach_alpha_nodes(nn::Graph& g, nn::ParamStore& alphas, SubgraphSample& s, bool soft);

// Q-values for all three agents from one 9-channel observation batch.
std::array<nn::Graph::Id, kNumAgents> supernet_forward(nn::Graph& g, nn::ParamStore& w,
                                                       const NetConfig& cfg,
                                                       const SubgraphSample& s, nn::Graph::Id obs,
                                                       const ForwardOpt& opt);

std::array<nn::Graph::Id, kNumAgents> derived_forward(nn::Graph& g, nn::ParamStore& w,
                                                      const NetConfig& cfg,
                                                      const DiscreteArch& arch, nn::Graph::Id obs,
                                                      const ForwardOpt& opt);

struct CountReport {
  std::int64_t macs = 0;
  std::int64_t params = 0;
};

CountReport count_conv2d(int cin, int cout, int k, int groups, int hout, int wout, bool bias);
CountReport count_linear(int in, int out, bool bias);
// Closed-form counts for the derived network (conv/linear MACs only;
// pool/skip/none and normalization contribute parameters, not MACs).
CountReport count_flops_params(const NetConfig& cfg, const DiscreteArch& arch);
CountReport count_supernet(const NetConfig& cfg);

}  // namespace planeloc::nas
