#include "planeloc/nas/network.hpp"

#include <cstdio>
#include <functional>
#include <optional>
#include <vector>

namespace planeloc::nas {

namespace {

using nn::Graph;
using nn::ParamStore;
using nn::TensorF;
namespace kern = planeloc::nn::kernels;

std::string e2(int e) {
  char b[8];
  std::snprintf(b, sizeof(b), "e%02d", e);
  return b;
}

const char* op_slug(OpKind op) {
  switch (op) {
    case OpKind::kNone: return "none";
    case OpKind::kConv3: return "conv3";
    case OpKind::kConv5: return "conv5";
    case OpKind::kDilConv3: return "dil3";
    case OpKind::kDilConv5: return "dil5";
    case OpKind::kSepConv3: return "sep3";
    case OpKind::kSepConv5: return "sep5";
    case OpKind::kMaxPool3: return "maxp";
    case OpKind::kAvgPool3: return "avgp";
    case OpKind::kSkip: return "skip";
  }
  return "none";
}

struct ConvGeom {
  int k, pad, dil;
};
ConvGeom conv_geom(OpKind op) {
  switch (op) {
    case OpKind::kConv3: return {3, 1, 1};
    case OpKind::kConv5: return {5, 2, 1};
    case OpKind::kDilConv3: return {3, 2, 2};
    case OpKind::kDilConv5: return {5, 4, 2};
    case OpKind::kSepConv3: return {3, 1, 1};
    case OpKind::kSepConv5: return {5, 2, 1};
    default: return {0, 0, 0};
  }
}

struct CellPlan {
  std::string prefix;
  int table = 0;
  bool reduce = false;
  bool s0_stride = false;  // previous cell reduced; align s0's spatial
  int c_s0 = 0, c_s1 = 0, c = 0;
};

// Channel/topology bookkeeping for the full three-agent model, in creation
// and forward order: 8 shared cells, then each agent's 4 private cells.
struct ModelPlan {
  std::vector<CellPlan> shared;
  std::array<std::vector<CellPlan>, kNumAgents> priv;
  int head_in = 0;  // channels into each agent head
};

ModelPlan build_plan(const NetConfig& cfg) {
  ModelPlan plan;
  int c_pp = cfg.stem_channels, c_p = cfg.stem_channels, c_cur = cfg.stem_channels;
  bool prev_reduce = false;
  for (int i = 0; i < kSharedCells; ++i) {
    const bool reduce = kSharedReduce[i];
    if (reduce) c_cur *= 2;
    plan.shared.push_back({"shared.cell" + std::to_string(i), table_index(0, reduce ? 1 : 0),
                           reduce, prev_reduce, c_pp, c_p, c_cur});
    c_pp = c_p;
    c_p = kNodeCount * c_cur;
    prev_reduce = reduce;
  }
  for (int a = 0; a < kNumAgents; ++a) {
    int pc_pp = c_pp, pc_p = c_p, pc_cur = c_cur;
    bool p_reduce = prev_reduce;
    for (int i = 0; i < kPrivateCells; ++i) {
      const bool reduce = kPrivateReduce[i];
      if (reduce) pc_cur *= 2;
      plan.priv[static_cast<std::size_t>(a)].push_back(
          {"agent" + std::to_string(a) + ".cell" + std::to_string(i),
           table_index(1 + a, reduce ? 1 : 0), reduce, p_reduce, pc_pp, pc_p, pc_cur});
      pc_pp = pc_p;
      pc_p = kNodeCount * pc_cur;
      p_reduce = reduce;
    }
    plan.head_in = pc_p;
  }
  return plan;
}

// Which ops exist on one edge: the whole candidate set for the supernet, the
// retained pick (if any) for a derived network.
std::vector<OpKind> edge_ops(const DiscreteArch* arch, int table, int edge) {
  if (!arch) {
    std::vector<OpKind> all;
    for (int op = 0; op < kNumOps; ++op) all.push_back(static_cast<OpKind>(op));
    return all;
  }
  const DiscreteCell& cell = arch->cells[static_cast<std::size_t>(table)];
  for (const auto& node : cell.picks) {
    for (const EdgePick& p : node) {
      if (p.edge == edge) return {p.op};
    }
  }
  return {};
}

using TensorFn =
    std::function<void(const std::string&, std::vector<int>, bool /*trainable*/, int /*fan_in*/)>;

void visit_bn(const TensorFn& fn, const std::string& pre, int c) {
  fn(pre + ".gamma", {c}, true, 0);
  fn(pre + ".beta", {c}, true, 0);
  fn(pre + ".run_mean", {c}, false, 0);
  fn(pre + ".run_var", {c}, false, 0);
}

void visit_op(const TensorFn& fn, const std::string& pre, OpKind op, int c) {
  const ConvGeom gm = conv_geom(op);
  switch (op) {
    case OpKind::kConv3:
    case OpKind::kConv5:
    case OpKind::kDilConv3:
    case OpKind::kDilConv5:
      fn(pre + ".w", {c, c, gm.k, gm.k}, true, c * gm.k * gm.k);
      visit_bn(fn, pre + ".bn", c);
      break;
    case OpKind::kSepConv3:
    case OpKind::kSepConv5:
      for (const char* stage : {".dw1", ".pw1", ".dw2", ".pw2"}) {
        const bool dw = stage[1] == 'd';
        if (dw) {
          fn(pre + stage + std::string(".w"), {c, 1, gm.k, gm.k}, true, gm.k * gm.k);
        } else {
          fn(pre + stage + std::string(".w"), {c, c, 1, 1}, true, c);
        }
      }
      visit_bn(fn, pre + ".bn1", c);
      visit_bn(fn, pre + ".bn2", c);
      break;
    default:
      break;  // none/pool/skip carry no tensors
  }
}

void visit_cell(const TensorFn& fn, const CellPlan& cp, const DiscreteArch* arch) {
  fn(cp.prefix + ".pre0.conv.w", {cp.c, cp.c_s0, 1, 1}, true, cp.c_s0);
  visit_bn(fn, cp.prefix + ".pre0.bn", cp.c);
  fn(cp.prefix + ".pre1.conv.w", {cp.c, cp.c_s1, 1, 1}, true, cp.c_s1);
  visit_bn(fn, cp.prefix + ".pre1.bn", cp.c);
  for (int e = 0; e < kEdgeCount; ++e) {
    for (OpKind op : edge_ops(arch, cp.table, e)) {
      visit_op(fn, cp.prefix + "." + e2(e) + "." + op_slug(op), op, cp.c);
    }
  }
}

void visit_model(const TensorFn& fn, const NetConfig& cfg, const DiscreteArch* arch) {
  const ModelPlan plan = build_plan(cfg);
  fn("stem.conv.w", {cfg.stem_channels, cfg.obs_channels, 3, 3}, true, cfg.obs_channels * 9);
  visit_bn(fn, "stem.bn", cfg.stem_channels);
  for (const CellPlan& cp : plan.shared) visit_cell(fn, cp, arch);
  for (int a = 0; a < kNumAgents; ++a) {
    for (const CellPlan& cp : plan.priv[static_cast<std::size_t>(a)]) visit_cell(fn, cp, arch);
    fn("agent" + std::to_string(a) + ".head.w", {cfg.actions, plan.head_in}, true, plan.head_in);
    fn("agent" + std::to_string(a) + ".head.b", {cfg.actions}, true, 0);
  }
}

void create_params(ParamStore& w, const NetConfig& cfg, const DiscreteArch* arch, Rng& init) {
  visit_model(
      [&](const std::string& name, std::vector<int> shape, bool trainable, int fan_in) {
        auto& p = w.create(name, std::move(shape), trainable);
        if (!trainable) {
          if (name.size() >= 8 && name.compare(name.size() - 8, 8, ".run_var") == 0) {
            nn::fill_constant(p.value, 1.0f);
          }
          return;
        }
        if (fan_in > 0) {
          Rng r = init.split(name);
          nn::kaiming_init(p.value, r, static_cast<std::size_t>(fan_in));
        } else if (name.size() >= 6 && name.compare(name.size() - 6, 6, ".gamma") == 0) {
          nn::fill_constant(p.value, 1.0f);
        }
        // beta and head bias stay zero
      },
      cfg, arch);
}

Graph::Id wparam(Graph& g, ParamStore& w, const std::string& name, bool as_param) {
  nn::ParamT<float>* p = w.find(name);
  if (!p) throw NameOrShapeMismatch("network parameter '" + name + "' missing from store");
  return as_param ? g.param(*p) : g.input_ref(p->value);
}

Graph::Id bn_apply(Graph& g, ParamStore& w, const std::string& pre, Graph::Id x,
                   const ForwardOpt& o) {
  auto gm = wparam(g, w, pre + ".gamma", o.weights_as_params);
  auto bt = wparam(g, w, pre + ".beta", o.weights_as_params);
  nn::ParamT<float>* rm = w.find(pre + ".run_mean");
  nn::ParamT<float>* rv = w.find(pre + ".run_var");
  if (!rm || !rv) throw NameOrShapeMismatch("running stats missing for '" + pre + "'");
  return g.batchnorm(x, gm, bt, *rm, *rv, o.phase != BnPhase::kEval,
                     o.phase == BnPhase::kTrain);
}

Graph::Id op_forward(Graph& g, ParamStore& w, const std::string& pre, OpKind op, Graph::Id x,
                     int stride, const ForwardOpt& o) {
  const ConvGeom gm = conv_geom(op);
  switch (op) {
    case OpKind::kNone: {
      std::vector<int> sh = g.val(x).shape;
      if (stride == 2) {
        sh[2] = (sh[2] + 1) / 2;
        sh[3] = (sh[3] + 1) / 2;
      }
      return g.input(TensorF(sh));
    }
    case OpKind::kConv3:
    case OpKind::kConv5:
    case OpKind::kDilConv3:
    case OpKind::kDilConv5: {
      auto r = g.relu(x);
      auto c = g.conv2d(r, wparam(g, w, pre + ".w", o.weights_as_params), std::nullopt,
                        kern::ConvSpec{stride, gm.pad, gm.dil, 1});
      return bn_apply(g, w, pre + ".bn", c, o);
    }
    case OpKind::kSepConv3:
    case OpKind::kSepConv5: {
      const int c = g.val(x).shape[1];
      auto h = g.relu(x);
      h = g.conv2d(h, wparam(g, w, pre + ".dw1.w", o.weights_as_params), std::nullopt,
                   kern::ConvSpec{stride, gm.pad, 1, c});
      h = g.conv2d(h, wparam(g, w, pre + ".pw1.w", o.weights_as_params), std::nullopt,
                   kern::ConvSpec{1, 0, 1, 1});
      h = bn_apply(g, w, pre + ".bn1", h, o);
      h = g.relu(h);
      h = g.conv2d(h, wparam(g, w, pre + ".dw2.w", o.weights_as_params), std::nullopt,
                   kern::ConvSpec{1, gm.pad, 1, c});
      h = g.conv2d(h, wparam(g, w, pre + ".pw2.w", o.weights_as_params), std::nullopt,
                   kern::ConvSpec{1, 0, 1, 1});
      return bn_apply(g, w, pre + ".bn2", h, o);
    }
    case OpKind::kMaxPool3:
      return g.maxpool3(x, stride);
    case OpKind::kAvgPool3:
      return g.avgpool3(x, stride);
    case OpKind::kSkip:
      return stride == 1 ? x : g.subsample2(x);
  }
  return x;
}

struct EdgeUse {
  bool present = false;
  OpKind op = OpKind::kNone;
  int k_star = 0;
  Graph::Id st = -1;
};
using EdgeFn = std::function<EdgeUse(int table, int edge)>;

Graph::Id cell_forward(Graph& g, ParamStore& w, const CellPlan& cp, const EdgeFn& efn,
                       Graph::Id s0, Graph::Id s1, const ForwardOpt& o, bool soft) {
  auto preprocess = [&](const char* tag, Graph::Id x, int stride) {
    auto r = g.relu(x);
    auto c = g.conv2d(r, wparam(g, w, cp.prefix + tag + std::string(".conv.w"),
                                o.weights_as_params),
                      std::nullopt, kern::ConvSpec{stride, 0, 1, 1});
    return bn_apply(g, w, cp.prefix + tag + std::string(".bn"), c, o);
  };
  auto p0 = preprocess(".pre0", s0, cp.s0_stride ? 2 : 1);
  auto p1 = preprocess(".pre1", s1, 1);
  std::vector<Graph::Id> states{p0, p1};
  std::vector<Graph::Id> nodes;
  for (int node = 0; node < kNodeCount; ++node) {
    std::vector<Graph::Id> ins;
    for (int j = 0; j < 2 + node; ++j) {
      const int e = edge_index(node, j);
      const EdgeUse eu = efn(cp.table, e);
      if (!eu.present) continue;
      const int stride = cp.reduce && j < 2 ? 2 : 1;
      auto out = op_forward(g, w, cp.prefix + "." + e2(e) + "." + op_slug(eu.op), eu.op,
                            states[static_cast<std::size_t>(j)], stride, o);
      if (eu.st >= 0) out = g.gdas_edge(out, eu.st, eu.k_star, soft);
      ins.push_back(out);
    }
    Graph::Id nid;
    if (ins.empty()) {
      std::vector<int> sh = g.val(p1).shape;
      if (cp.reduce) {
        sh[2] = (sh[2] + 1) / 2;
        sh[3] = (sh[3] + 1) / 2;
      }
      nid = g.input(TensorF(sh));
    } else {
      nid = g.add_all(ins);
    }
    nodes.push_back(nid);
    states.push_back(nid);
  }
  return g.concat(nodes, 1);
}

std::array<Graph::Id, kNumAgents> network_forward(Graph& g, ParamStore& w, const NetConfig& cfg,
                                                  const EdgeFn& efn, Graph::Id obs,
                                                  const ForwardOpt& o, bool soft) {
  const auto& osh = g.val(obs).shape;
  if (osh.size() != 4 || osh[1] != cfg.obs_channels || osh[2] != cfg.obs_h ||
      osh[3] != cfg.obs_w) {
    throw ShapeMismatch("network observation: got " + nn::shape_str(osh) + ", want {N," +
                        std::to_string(cfg.obs_channels) + "," + std::to_string(cfg.obs_h) +
                        "," + std::to_string(cfg.obs_w) + "}");
  }
  const ModelPlan plan = build_plan(cfg);
  auto stem = g.conv2d(obs, wparam(g, w, "stem.conv.w", o.weights_as_params), std::nullopt,
                       kern::ConvSpec{1, 1, 1, 1});
  stem = bn_apply(g, w, "stem.bn", stem, o);

  Graph::Id s0 = stem, s1 = stem;
  for (const CellPlan& cp : plan.shared) {
    auto out = cell_forward(g, w, cp, efn, s0, s1, o, soft);
    s0 = s1;
    s1 = out;
  }

  std::array<Graph::Id, kNumAgents> q{};
  for (int a = 0; a < kNumAgents; ++a) {
    Graph::Id a0 = s0, a1 = s1;
    for (const CellPlan& cp : plan.priv[static_cast<std::size_t>(a)]) {
      auto out = cell_forward(g, w, cp, efn, a0, a1, o, soft);
      a0 = a1;
      a1 = out;
    }
    auto pooled = g.global_avg_pool(a1);
    const std::string head = "agent" + std::to_string(a) + ".head";
    q[static_cast<std::size_t>(a)] =
        g.linear(pooled, wparam(g, w, head + ".w", o.weights_as_params),
                 wparam(g, w, head + ".b", o.weights_as_params));
  }
  return q;
}

}  // namespace

void create_supernet_params(ParamStore& w, const NetConfig& cfg, Rng& init) {
  create_params(w, cfg, nullptr, init);
}

void create_derived_params(ParamStore& w, const NetConfig& cfg, const DiscreteArch& arch,
                           Rng& init) {
  create_params(w, cfg, &arch, init);
}

SubgraphSample sample_subgraph(const ParamStore& alphas, double tau, Rng& rng) {
  if (tau <= 0) throw InvalidTemperature("sample_subgraph: tau must be positive");
  SubgraphSample s;
  s.tau = tau;
  for (int t = 0; t < kNumTables; ++t) {
    TableSample& ts = s.tables[static_cast<std::size_t>(t)];
    for (int e = 0; e < kEdgeCount; ++e) {
      const nn::ParamT<float>* row = alphas.find(alpha_param_name(t, e));
      if (!row) throw NameOrShapeMismatch("alpha row missing: " + alpha_param_name(t, e));
      int kstar = 0;
      float best = 0;
      for (int k = 0; k < kNumOps; ++k) {
        const float nz = static_cast<float>(rng.gumbel());
        ts.noise[static_cast<std::size_t>(e)][static_cast<std::size_t>(k)] = nz;
        const float z =
            (row->value.v[static_cast<std::size_t>(k)] + nz) / static_cast<float>(tau);
        if (k == 0 || z > best) {
          best = z;
          kstar = k;
        }
      }
      ts.k[static_cast<std::size_t>(e)] = kstar;
      ts.st[static_cast<std::size_t>(e)] = -1;
    }
  }
  return s;
}

void attach_alpha_nodes(Graph& g, ParamStore& alphas, SubgraphSample& s, bool soft) {
  for (int t = 0; t < kNumTables; ++t) {
    TableSample& ts = s.tables[static_cast<std::size_t>(t)];
    for (int e = 0; e < kEdgeCount; ++e) {
      nn::ParamT<float>* row = alphas.find(alpha_param_name(t, e));
      if (!row) throw NameOrShapeMismatch("alpha row missing: " + alpha_param_name(t, e));
      const auto& nz = ts.noise[static_cast<std::size_t>(e)];
      std::vector<float> noise(nz.begin(), nz.end());
      ts.st[static_cast<std::size_t>(e)] =
          g.gumbel_softmax_st(g.param(*row), s.tau, noise);
    }
  }
  s.soft = soft;
}

std::array<Graph::Id, kNumAgents> supernet_forward(Graph& g, ParamStore& w,
                                                   const NetConfig& cfg,
                                                   const SubgraphSample& s, Graph::Id obs,
                                                   const ForwardOpt& opt) {
  EdgeFn efn = [&s](int table, int edge) {
    const TableSample& ts = s.tables[static_cast<std::size_t>(table)];
    EdgeUse eu;
    eu.present = true;
    eu.k_star = ts.k[static_cast<std::size_t>(edge)];
    eu.op = static_cast<OpKind>(eu.k_star);
    eu.st = ts.st[static_cast<std::size_t>(edge)];
    return eu;
  };
  return network_forward(g, w, cfg, efn, obs, opt, s.soft);
}

std::array<Graph::Id, kNumAgents> derived_forward(Graph& g, ParamStore& w, const NetConfig& cfg,
                                                  const DiscreteArch& arch, Graph::Id obs,
                                                  const ForwardOpt& opt) {
  EdgeFn efn = [&arch](int table, int edge) {
    EdgeUse eu;
    for (const auto& node : arch.cells[static_cast<std::size_t>(table)].picks) {
      for (const EdgePick& p : node) {
        if (p.edge == edge) {
          eu.present = true;
          eu.op = p.op;
          return eu;
        }
      }
    }
    return eu;
  };
  return network_forward(g, w, cfg, efn, obs, opt, false);
}

CountReport count_conv2d(int cin, int cout, int k, int groups, int hout, int wout, bool bias) {
  CountReport r;
  r.macs = static_cast<std::int64_t>(cout) * (cin / groups) * k * k * hout * wout;
  r.params = static_cast<std::int64_t>(cout) * (cin / groups) * k * k + (bias ? cout : 0);
  return r;
}

CountReport count_linear(int in, int out, bool bias) {
  CountReport r;
  r.macs = static_cast<std::int64_t>(in) * out;
  r.params = static_cast<std::int64_t>(in) * out + (bias ? out : 0);
  return r;
}

namespace {

// MACs for one edge op at channel count c emitting hout x wout.
std::int64_t op_macs(OpKind op, int c, int hout, int wout) {
  const ConvGeom gm = conv_geom(op);
  switch (op) {
    case OpKind::kConv3:
    case OpKind::kConv5:
    case OpKind::kDilConv3:
    case OpKind::kDilConv5:
      return count_conv2d(c, c, gm.k, 1, hout, wout, false).macs;
    case OpKind::kSepConv3:
    case OpKind::kSepConv5:
      return 2 * (count_conv2d(c, c, gm.k, c, hout, wout, false).macs +
                  count_conv2d(c, c, 1, 1, hout, wout, false).macs);
    default:
      return 0;  // none/pool/skip
  }
}

CountReport count_model(const NetConfig& cfg, const DiscreteArch* arch) {
  CountReport total;
  visit_model(
      [&](const std::string&, std::vector<int> shape, bool trainable, int) {
        if (!trainable) return;
        total.params += static_cast<std::int64_t>(nn::TensorF::count(shape));
      },
      cfg, arch);

  total.macs += count_conv2d(cfg.obs_channels, cfg.stem_channels, 3, 1, cfg.obs_h, cfg.obs_w,
                             false)
                    .macs;
  const ModelPlan plan = build_plan(cfg);
  auto walk = [&](const std::vector<CellPlan>& cells, int& h0, int& w0, int& h1, int& w1) {
    for (const CellPlan& cp : cells) {
      const int ph = h1, pw = w1;  // preprocessing aligns both inputs to s1's extent
      const int nh = cp.reduce ? (ph + 1) / 2 : ph;
      const int nw = cp.reduce ? (pw + 1) / 2 : pw;
      total.macs += count_conv2d(cp.c_s0, cp.c, 1, 1, ph, pw, false).macs;
      total.macs += count_conv2d(cp.c_s1, cp.c, 1, 1, ph, pw, false).macs;
      for (int e = 0; e < kEdgeCount; ++e) {
        for (OpKind op : edge_ops(arch, cp.table, e)) {
          total.macs += op_macs(op, cp.c, nh, nw);
        }
      }
      h0 = h1;
      w0 = w1;
      h1 = nh;
      w1 = nw;
    }
  };
  int h0 = cfg.obs_h, w0 = cfg.obs_w, h1 = cfg.obs_h, w1 = cfg.obs_w;
  walk(plan.shared, h0, w0, h1, w1);
  for (int a = 0; a < kNumAgents; ++a) {
    int ph0 = h0, pw0 = w0, ph1 = h1, pw1 = w1;
    walk(plan.priv[static_cast<std::size_t>(a)], ph0, pw0, ph1, pw1);
    total.macs += count_linear(plan.head_in, cfg.actions, true).macs;
  }
  return total;
}

}  // namespace

CountReport count_flops_params(const NetConfig& cfg, const DiscreteArch& arch) {
  return count_model(cfg, &arch);
}

CountReport count_supernet(const NetConfig& cfg) { return count_model(cfg, nullptr); }

}  // namespace planeloc::nas
