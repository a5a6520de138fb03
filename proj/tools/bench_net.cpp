// Times the pieces that dominate a training run: sampled-subgraph forward and
// backward at batch size, the architecture-gradient pass, single-observation
// rollout forwards, and the derived network.  Prints per-iteration wall times
// and model sizes for a few observation scales.
#include <chrono>
#include <cstdio>
#include <sys/resource.h>

#include "planeloc/nas/arch.hpp"
#include "planeloc/nas/network.hpp"
#include "planeloc/nn/params.hpp"

using namespace planeloc;
using namespace planeloc::nas;
using nn::Graph;
using nn::ParamStore;
using nn::TensorF;

namespace {

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

long peak_rss_mb() {
  rusage u{};
  getrusage(RUSAGE_SELF, &u);
  return u.ru_maxrss / 1024;
}

TensorF rand_obs(const NetConfig& cfg, int batch, Rng& rng) {
  TensorF t({batch, cfg.obs_channels, cfg.obs_h, cfg.obs_w});
  for (auto& v : t.v) v = static_cast<float>(rng.uniform(0.0, 1.0));
  return t;
}

struct BenchResult {
  double omega_s = 0, alpha_s = 0, rollout_s = 0, derived_s = 0;
};

Graph::Id bench_loss(Graph& g, const std::array<Graph::Id, 3>& q) {
  std::vector<Graph::Id> parts;
  for (auto id : q) parts.push_back(g.reduce_mean(g.mul(id, id)));
  return g.reduce_mean(g.add_all(parts));
}

void run_scale(const char* label, NetConfig cfg, int batch, int iters) {
  Rng rng = Rng::from_seed(7);
  ParamStore w;
  create_supernet_params(w, cfg, rng);
  ParamStore alphas;
  create_alpha_params(alphas);
  nn::Adam opt_w(5e-5);
  nn::Adam opt_a(0.05);

  const auto sup = count_supernet(cfg);
  std::printf("[%s] obs %dx%d batch %d: supernet %.1fM params, %.1fM macs/sample\n", label,
              cfg.obs_h, cfg.obs_w, batch, sup.params / 1e6, sup.macs / 1e6);

  BenchResult r;
  for (int i = 0; i < iters; ++i) {
    SubgraphSample s = sample_subgraph(alphas, 1.0, rng);
    TensorF obs = rand_obs(cfg, batch, rng);
    {
      double t0 = now_s();
      Graph g;
      ForwardOpt o;
      o.phase = BnPhase::kTrain;
      o.weights_as_params = true;
      auto q = supernet_forward(g, w, cfg, s, g.input(obs), o);
      g.backward(bench_loss(g, q));
      opt_w.step(w);
      r.omega_s += now_s() - t0;
    }
    {
      double t0 = now_s();
      Graph g;
      SubgraphSample sa = s;
      attach_alpha_nodes(g, alphas, sa, false);
      ForwardOpt o;
      o.phase = BnPhase::kTrainFrozen;
      auto q = supernet_forward(g, w, cfg, sa, g.input(obs), o);
      g.backward(bench_loss(g, q));
      opt_a.step(alphas);
      r.alpha_s += now_s() - t0;
    }
    {
      TensorF one = rand_obs(cfg, 1, rng);
      double t0 = now_s();
      Graph g(false);
      ForwardOpt o;
      auto q = supernet_forward(g, w, cfg, s, g.input(one), o);
      (void)q;
      r.rollout_s += now_s() - t0;
    }
  }

  const DiscreteArch arch = derive_architecture(alphas);
  ParamStore dw;
  Rng drng = Rng::from_seed(8);
  create_derived_params(dw, cfg, arch, drng);
  const auto dc = count_flops_params(cfg, arch);
  nn::Adam opt_d(5e-5);
  for (int i = 0; i < iters; ++i) {
    TensorF obs = rand_obs(cfg, batch, rng);
    double t0 = now_s();
    Graph g;
    ForwardOpt o;
    o.phase = BnPhase::kTrain;
    o.weights_as_params = true;
    auto q = derived_forward(g, w, cfg, arch, g.input(obs), o);
    g.backward(bench_loss(g, q));
    opt_d.step(dw);
    r.derived_s += now_s() - t0;
  }

  std::printf("  omega step   %7.1f ms\n", 1e3 * r.omega_s / iters);
  std::printf("  alpha step   %7.1f ms\n", 1e3 * r.alpha_s / iters);
  std::printf("  rollout fwd  %7.1f ms\n", 1e3 * r.rollout_s / iters);
  std::printf("  derived step %7.1f ms  (%.1fM params, %.1fM macs)\n",
              1e3 * r.derived_s / iters, dc.params / 1e6, dc.macs / 1e6);
  std::printf("  peak rss     %ld MB\n", peak_rss_mb());
}

}  // namespace

int main(int argc, char** argv) {
  int iters = argc > 1 ? std::atoi(argv[1]) : 3;
  NetConfig base;
  run_scale("default", base, 32, iters);
  NetConfig small = base;
  small.obs_h = small.obs_w = 16;
  run_scale("obs16", small, 32, iters);
  NetConfig tiny = base;
  tiny.obs_h = tiny.obs_w = 16;
  tiny.stem_channels = 4;
  run_scale("obs16-stem4", tiny, 32, iters);
  return 0;
}
