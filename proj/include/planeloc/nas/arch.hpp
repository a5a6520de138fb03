#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "planeloc/errors.hpp"
#include "planeloc/nn/params.hpp"

namespace planeloc::nas {

inline constexpr int kNumOps = 10;
inline constexpr int kNodeCount = 4;
inline constexpr int kEdgeCount = 14;  // node k has 2+k inputs; 2+3+4+5
inline constexpr int kRetainedPerNode = 2;
inline constexpr int kNumAgents = 3;
inline constexpr int kNumTables = 8;  // (shared + 3 agents) x (normal, reduce)
inline constexpr int kNumActions = 8;

enum class OpKind : int {
  kNone = 0,
  kConv3 = 1,
  kConv5 = 2,
  kDilConv3 = 3,
  kDilConv5 = 4,
  kSepConv3 = 5,
  kSepConv5 = 6,
  kMaxPool3 = 7,
  kAvgPool3 = 8,
  kSkip = 9,
};

const char* op_name(OpKind k);
OpKind op_from_name(const std::string& name);  // FormatError on unknown token

inline int edge_offset(int node) {
  static constexpr int kOff[kNodeCount] = {0, 2, 5, 9};
  return kOff[node];
}
inline int edge_index(int node, int j) { return edge_offset(node) + j; }

// component: 0 = shared, 1..3 = agents S,T,C; kind: 0 = normal, 1 = reduce.
inline int table_index(int component, int kind) { return component * 2 + kind; }
std::string table_name(int table);
std::string alpha_param_name(int table, int edge);

// 8 tables x 14 edges, each a 10-logit row, zero-initialized.
void create_alpha_params(nn::ParamStore& alphas);

struct EdgePick {
  int edge = -1;
  OpKind op = OpKind::kNone;
  bool operator==(const EdgePick&) const = default;
};

struct DiscreteCell {
  // Per node, the two retained incoming edges in ascending edge order.
  std::array<std::array<EdgePick, kRetainedPerNode>, kNodeCount> picks{};
  bool operator==(const DiscreteCell&) const = default;
};

struct DiscreteArch {
  std::array<DiscreteCell, kNumTables> cells{};
  bool operator==(const DiscreteArch&) const = default;
};

// Per edge: argmax op over all 10 logits (ties -> lowest op index). Per
// node: retain the 2 incoming edges with the highest max logit excluding
// `none` (ties -> lower edge index).
DiscreteArch derive_architecture(const nn::ParamStore& alphas);

std::string arch_to_text(const DiscreteArch& arch);
DiscreteArch arch_from_text(const std::string& text);  // FormatError
void save_arch(const DiscreteArch& arch, const std::string& path);
DiscreteArch load_arch(const std::string& path);  // MissingArtifact / FormatError

// Index of the history entry with the highest validation reward sum; ties
// resolve to the earliest epoch.
std::size_t select_best_alpha(const std::vector<double>& val_reward_sums);  // EmptyHistory

}  // namespace planeloc::nas
