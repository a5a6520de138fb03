#include "planeloc/nas/arch.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace planeloc::nas {

namespace {

constexpr const char* kOpNames[kNumOps] = {
    "none",         "conv3x3",      "conv5x5",      "dil_conv3x3", "dil_conv5x5",
    "sep_conv3x3",  "sep_conv5x5",  "max_pool3x3",  "avg_pool3x3", "skip_connect",
};

// Source label for input slot j of a node: cell inputs s0/s1, then nodes.
std::string source_label(int j) {
  if (j == 0) return "s0";
  if (j == 1) return "s1";
  return "n" + std::to_string(j - 2);
}

int source_from_label(const std::string& s) {
  if (s == "s0") return 0;
  if (s == "s1") return 1;
  if (s.size() == 2 && s[0] == 'n' && s[1] >= '0' && s[1] <= '9') return 2 + (s[1] - '0');
  throw FormatError("arch: bad edge source '" + s + "'");
}

// (node, input slot) for a linear edge index.
std::pair<int, int> edge_node_slot(int edge) {
  for (int node = kNodeCount - 1; node >= 0; --node) {
    if (edge >= edge_offset(node)) return {node, edge - edge_offset(node)};
  }
  throw FormatError("arch: bad edge index " + std::to_string(edge));
}

}  // namespace

const char* op_name(OpKind k) { return kOpNames[static_cast<int>(k)]; }

OpKind op_from_name(const std::string& name) {
  for (int i = 0; i < kNumOps; ++i) {
    if (name == kOpNames[i]) return static_cast<OpKind>(i);
  }
  throw FormatError("arch: unknown op '" + name + "'");
}

std::string table_name(int table) {
  const int component = table / 2;
  const std::string kind = table % 2 == 0 ? "normal" : "reduce";
  if (component == 0) return "shared." + kind;
  return "agent" + std::to_string(component - 1) + "." + kind;
}

std::string alpha_param_name(int table, int edge) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), ".e%02d", edge);
  return "alpha." + table_name(table) + buf;
}

void create_alpha_params(nn::ParamStore& alphas) {
  for (int t = 0; t < kNumTables; ++t) {
    for (int e = 0; e < kEdgeCount; ++e) {
      alphas.create(alpha_param_name(t, e), {kNumOps});
    }
  }
}

DiscreteArch derive_architecture(const nn::ParamStore& alphas) {
  DiscreteArch arch;
  for (int t = 0; t < kNumTables; ++t) {
    for (int node = 0; node < kNodeCount; ++node) {
      const int fan_in = 2 + node;
      std::vector<std::pair<float, int>> ranked;  // (-score, edge) for stable sort
      std::vector<OpKind> best_op(static_cast<std::size_t>(fan_in));
      for (int j = 0; j < fan_in; ++j) {
        const int e = edge_index(node, j);
        const nn::ParamT<float>* row = alphas.find(alpha_param_name(t, e));
        int argmax = 0;
        float keep_score = row->value.v[1];
        for (int op = 1; op < kNumOps; ++op) {
          if (row->value.v[static_cast<std::size_t>(op)] >
              row->value.v[static_cast<std::size_t>(argmax)]) {
            argmax = op;
          }
          keep_score = std::max(keep_score, row->value.v[static_cast<std::size_t>(op)]);
        }
        best_op[static_cast<std::size_t>(j)] = static_cast<OpKind>(argmax);
        ranked.emplace_back(-keep_score, e);
      }
      std::sort(ranked.begin(), ranked.end());  // ties fall to the lower edge index
      std::array<EdgePick, kRetainedPerNode> picks;
      for (int r = 0; r < kRetainedPerNode; ++r) {
        const int e = ranked[static_cast<std::size_t>(r)].second;
        picks[static_cast<std::size_t>(r)] = {e, best_op[static_cast<std::size_t>(
                                                     e - edge_offset(node))]};
      }
      std::sort(picks.begin(), picks.end(),
                [](const EdgePick& a, const EdgePick& b) { return a.edge < b.edge; });
      arch.cells[static_cast<std::size_t>(t)].picks[static_cast<std::size_t>(node)] = picks;
    }
  }
  return arch;
}

std::string arch_to_text(const DiscreteArch& arch) {
  std::ostringstream out;
  out << "arch 1\n";
  for (int t = 0; t < kNumTables; ++t) {
    out << "[" << table_name(t) << "]\n";
    for (int node = 0; node < kNodeCount; ++node) {
      for (const EdgePick& p : arch.cells[static_cast<std::size_t>(t)]
                                   .picks[static_cast<std::size_t>(node)]) {
        const auto [nd, slot] = edge_node_slot(p.edge);
        out << "edge(n" << nd << "<-" << source_label(slot) << "): " << op_name(p.op) << "\n";
      }
    }
  }
  return out.str();
}

DiscreteArch arch_from_text(const std::string& text) {
  DiscreteArch arch;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "arch 1") {
    throw FormatError("arch: missing 'arch 1' header");
  }
  int table = -1;
  std::array<std::array<std::vector<EdgePick>, kNodeCount>, kNumTables> acc;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw FormatError("arch: malformed section '" + line + "'");
      const std::string name = line.substr(1, line.size() - 2);
      table = -1;
      for (int t = 0; t < kNumTables; ++t) {
        if (name == table_name(t)) table = t;
      }
      if (table < 0) throw FormatError("arch: unknown section '" + name + "'");
      continue;
    }
    if (table < 0) throw FormatError("arch: edge line before any section");
    // edge(nK<-SRC): OP
    int node = -1;
    char src[8] = {0};
    char opname[24] = {0};
    if (std::sscanf(line.c_str(), "edge(n%d<-%7[^)]) : %23s", &node, src, opname) != 3 &&
        std::sscanf(line.c_str(), "edge(n%d<-%7[^)]): %23s", &node, src, opname) != 3) {
      throw FormatError("arch: malformed edge line '" + line + "'");
    }
    if (node < 0 || node >= kNodeCount) {
      throw FormatError("arch: node out of range in '" + line + "'");
    }
    const int slot = source_from_label(src);
    if (slot >= 2 + node) throw FormatError("arch: source after target in '" + line + "'");
    acc[static_cast<std::size_t>(table)][static_cast<std::size_t>(node)].push_back(
        {edge_index(node, slot), op_from_name(opname)});
  }
  for (int t = 0; t < kNumTables; ++t) {
    for (int node = 0; node < kNodeCount; ++node) {
      auto& v = acc[static_cast<std::size_t>(t)][static_cast<std::size_t>(node)];
      if (static_cast<int>(v.size()) != kRetainedPerNode) {
        throw FormatError("arch: " + table_name(t) + " node " + std::to_string(node) +
                          " has " + std::to_string(v.size()) + " edges, expected 2");
      }
      std::sort(v.begin(), v.end(),
                [](const EdgePick& a, const EdgePick& b) { return a.edge < b.edge; });
      if (v[0].edge == v[1].edge) {
        throw FormatError("arch: duplicate edge in " + table_name(t) + " node " +
                          std::to_string(node));
      }
      arch.cells[static_cast<std::size_t>(t)].picks[static_cast<std::size_t>(node)] = {v[0],
                                                                                       v[1]};
    }
  }
  return arch;
}

void save_arch(const DiscreteArch& arch, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << arch_to_text(arch);
  if (!out) throw IoError("write failed for '" + path + "'");
}

DiscreteArch load_arch(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("architecture file '" + path + "' not found");
  std::ostringstream buf;
  buf << in.rdbuf();
  return arch_from_text(buf.str());
}

std::size_t select_best_alpha(const std::vector<double>& val_reward_sums) {
  if (val_reward_sums.empty()) throw EmptyHistory("no epochs recorded");
  std::size_t best = 0;
  for (std::size_t i = 1; i < val_reward_sums.size(); ++i) {
    if (val_reward_sums[i] > val_reward_sums[best]) best = i;
  }
  return best;
}

}  // namespace planeloc::nas
