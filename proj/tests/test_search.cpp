#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "planeloc/nas/search.hpp"

using namespace planeloc;
using namespace planeloc::nas;
using nn::ParamStore;
using nn::TensorF;

namespace {

NetConfig tiny_net() {
  NetConfig n;
  n.obs_h = 12;
  n.obs_w = 12;
  n.stem_channels = 2;
  return n;
}

SearchHyper test_hyper() {
  SearchHyper h;
  h.batch_size = 4;
  h.lr_omega = 1e-3;  // unit-scale steps so movement is visible quickly
  return h;
}

using Snapshot = std::map<std::string, std::vector<float>>;

Snapshot snap(const ParamStore& s) {
  Snapshot out;
  for (const auto& p : s.items()) out[p->name] = p->value.v;
  return out;
}

// names whose values changed between two snapshots
std::vector<std::string> changed(const Snapshot& a, const Snapshot& b) {
  std::vector<std::string> out;
  for (const auto& [name, va] : a) {
    const auto& vb = b.at(name);
    if (std::memcmp(va.data(), vb.data(), va.size() * sizeof(float)) != 0) out.push_back(name);
  }
  return out;
}

marl::Transition random_transition(Rng& rng, const NetConfig& net) {
  marl::Transition t;
  t.obs = TensorF({net.obs_channels, net.obs_h, net.obs_w});
  t.next_obs = TensorF({net.obs_channels, net.obs_h, net.obs_w});
  for (auto& v : t.obs.v) v = static_cast<float>(rng.normal() * 0.5);
  for (auto& v : t.next_obs.v) v = static_cast<float>(rng.normal() * 0.5);
  for (int a = 0; a < 3; ++a) {
    t.actions[a] = static_cast<int>(rng.next_int(8));
    t.rewards[a] = t.actions[a] == 0 ? 1.0f : -1.0f;  // action 0 always wins
  }
  return t;
}

void fill(marl::ReplayBuffer& buf, Rng& rng, const NetConfig& net, int n) {
  for (int i = 0; i < n; ++i) buf.push(random_transition(rng, net));
}

// Held-out DDQN loss on the argmax subgraph, measured with live batch
// statistics (the same footing the architecture objective trains on).
double validation_loss(SupernetTrainer& tr, const std::vector<const marl::Transition*>& batch,
                       double gamma) {
  const SubgraphSample s = tr.argmax_subgraph();
  marl::ForwardFn online = [&](nn::Graph& g, nn::Graph::Id obs, const ForwardOpt& o) {
    return supernet_forward(g, tr.weights(), tr.net(), s, obs, o);
  };
  marl::ForwardFn tgt = [&](nn::Graph& g, nn::Graph::Id obs, const ForwardOpt& o) {
    return supernet_forward(g, tr.target(), tr.net(), s, obs, o);
  };
  nn::Graph g(false);
  ForwardOpt lo;
  lo.phase = BnPhase::kTrainFrozen;
  const auto res = marl::ddqn_loss(g, batch, online, tgt, gamma, lo);
  return g.val(res.loss).v[0];
}

}  // namespace

TEST_CASE("schedules ramp linearly and clamp") {
  CHECK(linear_schedule(10.0, 0.1, 0, 100) == doctest::Approx(10.0));
  CHECK(linear_schedule(10.0, 0.1, 100, 100) == doctest::Approx(0.1));
  CHECK(linear_schedule(10.0, 0.1, 50, 100) == doctest::Approx(5.05));
  CHECK(linear_schedule(10.0, 0.1, 400, 100) == doctest::Approx(0.1));
  CHECK(linear_schedule(10.0, 0.1, -3, 100) == doctest::Approx(10.0));

  CHECK(epsilon_at(0, 1000) == doctest::Approx(1.0));
  CHECK(epsilon_at(250, 1000) == doctest::Approx(0.55));
  CHECK(epsilon_at(500, 1000) == doctest::Approx(0.1));
  CHECK(epsilon_at(999, 1000) == doctest::Approx(0.1));

  const SearchHyper defaults;
  CHECK(defaults.gamma == doctest::Approx(0.9));
  CHECK(defaults.lr_omega == doctest::Approx(5e-5));
  CHECK(defaults.lr_alpha == doctest::Approx(0.05));
  CHECK(defaults.batch_size == 32);
  CHECK(defaults.target_sync == 1500);
  CHECK(defaults.tau_start == doctest::Approx(10.0));
  CHECK(defaults.tau_end == doctest::Approx(0.1));
}

TEST_CASE("weight and architecture steps stay in their own lanes") {
  Rng init = Rng::from_seed(42);
  SupernetTrainer tr(tiny_net(), test_hyper(), init);
  Rng data = Rng::from_seed(1);
  marl::ReplayBuffer buf(64);
  fill(buf, data, tr.net(), 16);
  Rng rng = Rng::from_seed(2);

  const Snapshot w0 = snap(tr.weights());
  const Snapshot a0 = snap(tr.alphas());
  const Snapshot t0 = snap(tr.target());

  tr.omega_step(buf, 5.0, rng);
  const Snapshot w1 = snap(tr.weights());
  const Snapshot a1 = snap(tr.alphas());
  CHECK(!changed(w0, w1).empty());
  CHECK(changed(a0, a1).empty());       // logits untouched by a weight step
  CHECK(changed(t0, snap(tr.target())).empty());  // target only moves on sync
  bool stats_moved = false;
  for (const auto& name : changed(w0, w1)) {
    if (name.find("run_mean") != std::string::npos) stats_moved = true;
  }
  CHECK(stats_moved);  // weight steps refresh the running batch statistics

  tr.alpha_step(buf, 5.0, rng);
  const Snapshot w2 = snap(tr.weights());
  const Snapshot a2 = snap(tr.alphas());
  CHECK(changed(w1, w2).empty());  // includes frozen running statistics
  CHECK(!changed(a1, a2).empty());

  // priorities of the replayed items were refreshed by the weight step
  bool prio_moved = false;
  for (std::size_t i = 0; i < buf.size(); ++i) {
    if (buf.priority(i) != 1.0f) prio_moved = true;
  }
  CHECK(prio_moved);
}

TEST_CASE("alternating update demands two batches") {
  Rng init = Rng::from_seed(7);
  SupernetTrainer tr(tiny_net(), test_hyper(), init);
  Rng data = Rng::from_seed(3);
  marl::ReplayBuffer buf(64);
  fill(buf, data, tr.net(), 7);  // one short of 2 * batch_size
  Rng rng = Rng::from_seed(4);
  CHECK_THROWS_AS(tr.alternating_update(buf, 5.0, rng), EmptyBuffer);
  fill(buf, data, tr.net(), 1);
  const auto stats = tr.alternating_update(buf, 5.0, rng);
  CHECK(std::isfinite(stats.omega_loss));
  CHECK(std::isfinite(stats.alpha_loss));
  CHECK(tr.iters() == 1);
}

TEST_CASE("target network follows only on the sync boundary") {
  Rng init = Rng::from_seed(9);
  SearchHyper h = test_hyper();
  h.target_sync = 3;
  SupernetTrainer tr(tiny_net(), h, init);
  Rng data = Rng::from_seed(5);
  marl::ReplayBuffer buf(64);
  fill(buf, data, tr.net(), 16);
  Rng rng = Rng::from_seed(6);

  const Snapshot t0 = snap(tr.target());
  tr.omega_step(buf, 5.0, rng);
  tr.omega_step(buf, 5.0, rng);
  CHECK(changed(t0, snap(tr.target())).empty());
  tr.omega_step(buf, 5.0, rng);  // third step crosses the boundary
  CHECK(!changed(t0, snap(tr.target())).empty());
  CHECK(changed(snap(tr.weights()), snap(tr.target())).empty());  // exact copy
}

TEST_CASE("alternating updates learn a buffer with one dominant action") {
  Rng init = Rng::from_seed(11);
  SearchHyper h = test_hyper();
  h.batch_size = 8;
  h.gamma = 0.0;  // pure regression onto the reward
  SupernetTrainer tr(tiny_net(), h, init);
  // perturb the logits so the argmax subgraph starts as a real network
  // rather than the all-`none` zero function
  Rng jitter = Rng::from_seed(99);
  for (const auto& p : tr.alphas().items()) {
    for (auto& v : p->value.v) v = static_cast<float>(jitter.normal() * 0.5);
  }

  Rng data = Rng::from_seed(12);
  marl::ReplayBuffer buf(512);
  fill(buf, data, tr.net(), 256);

  std::vector<marl::Transition> held;
  for (int i = 0; i < 32; ++i) held.push_back(random_transition(data, tr.net()));
  std::vector<const marl::Transition*> held_ptrs;
  for (const auto& t : held) held_ptrs.push_back(&t);

  const double before = validation_loss(tr, held_ptrs, h.gamma);
  Rng rng = Rng::from_seed(13);
  for (int it = 0; it < 200; ++it) {
    tr.alternating_update(buf, linear_schedule(h.tau_start, h.tau_end, it, 199), rng);
  }
  const double after = validation_loss(tr, held_ptrs, h.gamma);
  CHECK(after < 0.8 * before);

  // the winning action's value must have pulled ahead on unseen observations
  const SubgraphSample s = tr.argmax_subgraph();
  double margin = 0;
  int n = 0;
  for (int i = 0; i < 8; ++i) {
    const auto& t = held[static_cast<std::size_t>(i)];
    nn::Graph g(false);
    TensorF o = t.obs;
    o.shape.insert(o.shape.begin(), 1);
    auto q = supernet_forward(g, tr.weights(), tr.net(), s, g.input(std::move(o)), ForwardOpt{});
    for (int a = 0; a < kNumAgents; ++a) {
      const auto& row = g.val(q[a]).v;
      for (int k = 1; k < 8; ++k) {
        margin += row[0] - row[static_cast<std::size_t>(k)];
        ++n;
      }
    }
  }
  CHECK(margin / n > 0.0);
}

TEST_CASE("identically seeded searches produce identical bits") {
  auto run = [] {
    Rng init = Rng::from_seed(77);
    SupernetTrainer tr(tiny_net(), test_hyper(), init);
    Rng data = Rng::from_seed(78);
    marl::ReplayBuffer buf(64);
    fill(buf, data, tr.net(), 32);
    Rng rng = Rng::from_seed(79);
    for (int i = 0; i < 3; ++i) tr.alternating_update(buf, 2.0, rng);
    return std::make_pair(snap(tr.weights()), snap(tr.alphas()));
  };
  const auto a = run();
  const auto b = run();
  CHECK(changed(a.first, b.first).empty());
  CHECK(changed(a.second, b.second).empty());
}

TEST_CASE("argmax subgraph reads the logit tables directly") {
  Rng init = Rng::from_seed(21);
  SupernetTrainer tr(tiny_net(), test_hyper(), init);
  auto& alphas = tr.alphas();
  // all-zero logits tie toward op 0 everywhere
  SubgraphSample s0 = tr.argmax_subgraph();
  for (const auto& t : s0.tables) {
    for (int e = 0; e < kEdgeCount; ++e) {
      CHECK(t.k[static_cast<std::size_t>(e)] == 0);
      CHECK(t.st[static_cast<std::size_t>(e)] == -1);
    }
  }
  alphas.find(alpha_param_name(2, 5))->value.v[7] = 3.0f;
  alphas.find(alpha_param_name(2, 5))->value.v[3] = 3.0f;  // tie -> lowest index
  alphas.find(alpha_param_name(6, 13))->value.v[9] = 1.0f;
  SubgraphSample s1 = tr.argmax_subgraph();
  CHECK(s1.tables[2].k[5] == 3);
  CHECK(s1.tables[6].k[13] == 9);
  CHECK(s1.tables[0].k[0] == 0);
}
