#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <cstring>
#include <vector>

#include "planeloc/marl/ddqn.hpp"
#include "planeloc/marl/env.hpp"
#include "planeloc/marl/replay.hpp"
#include "planeloc/nn/params.hpp"

using namespace planeloc;
using namespace planeloc::marl;
using nn::Graph;
using nn::ParamStore;
using nn::TensorF;

namespace {

phantom::Phantom small_phantom(std::uint64_t seed) {
  phantom::PhantomConfig cfg;
  cfg.dim = 24;
  return phantom::generate(cfg, seed);
}

EnvConfig small_env() {
  EnvConfig e;
  e.obs_h = 12;
  e.obs_w = 12;
  return e;
}

std::array<geom::PlaneParams, 3> noisy_start(const phantom::Phantom& ph, std::uint64_t seed) {
  Rng rng = Rng::from_seed(seed);
  return phantom::warm_start(ph, phantom::WarmStartMode::kTrainNoise, {}, nullptr, rng);
}

bool same_bits(const TensorF& a, const TensorF& b) {
  return a.shape == b.shape &&
         std::memcmp(a.v.data(), b.v.data(), a.v.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("reset fills the history rings and the observation layout") {
  phantom::Phantom ph = small_phantom(1);
  auto start = noisy_start(ph, 7);
  EnvState s = reset(ph, EnvMode::kTrain, start);
  CHECK(s.step == 0);
  for (int a = 0; a < kAgents; ++a) {
    for (int h = 0; h < kHistory; ++h) CHECK(s.history[a][h] == start[a]);
  }

  const EnvConfig ec = small_env();
  TensorF obs = observe(s, ec);
  CHECK(obs.shape == std::vector<int>{9, 12, 12});
  const std::size_t px = 144;
  for (int a = 0; a < kAgents; ++a) {
    const geom::Image ref =
        geom::extract_slice(ph.vol, start[a], ec.obs_h, ec.obs_w, ec.pixel_spacing_mm);
    for (int h = 0; h < kHistory; ++h) {
      const float* ch = obs.v.data() + (a * kHistory + h) * px;
      CHECK(std::memcmp(ch, ref.px.data(), px * sizeof(float)) == 0);
    }
  }

  TensorF again = observe(s, ec);
  CHECK(same_bits(obs, again));

  // after one step the two oldest channels still show the start plane and the
  // newest shows the moved plane
  EnvState s2 = reset(ph, EnvMode::kTrain, start);
  step(s2, {0, 2, 4}, ec);
  CHECK(s2.step == 1);
  for (int a = 0; a < kAgents; ++a) {
    CHECK(s2.history[a][0] == start[a]);
    CHECK(s2.history[a][1] == start[a]);
    CHECK(!(s2.history[a][2] == start[a]));
  }
  TensorF obs2 = observe(s2, ec);
  for (int a = 0; a < kAgents; ++a) {
    const geom::Image moved =
        geom::extract_slice(ph.vol, s2.history[a][2], ec.obs_h, ec.obs_w, ec.pixel_spacing_mm);
    const float* oldest = obs2.v.data() + (a * kHistory + 0) * px;
    const float* newest = obs2.v.data() + (a * kHistory + 2) * px;
    CHECK(std::memcmp(oldest, obs.v.data() + (a * kHistory) * px, px * sizeof(float)) == 0);
    CHECK(std::memcmp(newest, moved.px.data(), px * sizeof(float)) == 0);
  }
}

TEST_CASE("rewards are the sign of the distance change") {
  phantom::Phantom ph = small_phantom(2);
  const EnvConfig ec = small_env();
  const double ds = d_scale_for(ec, ph);

  // start exactly on ground truth except a +0.5mm offset on every plane
  std::array<geom::PlaneParams, 3> start;
  for (int i = 0; i < 3; ++i) {
    const auto& g = ph.gt_planes[i];
    start[i] = geom::PlaneParams::from_values(g.zeta(), g.beta(), g.phi(), g.d() + 0.5);
  }

  SUBCASE("offset step toward the target earns +1, away earns -1") {
    EnvState s = reset(ph, EnvMode::kTrain, start);
    auto r = step(s, {7, 7, 7}, ec);  // -d moves toward gt
    for (int a = 0; a < kAgents; ++a) {
      CHECK(r[a] == 1);
      CHECK(geom::plane_distance(s.history[a][2], ph.gt_planes[a], ds) <
            geom::plane_distance(start[a], ph.gt_planes[a], ds));
    }
    EnvState s2 = reset(ph, EnvMode::kTrain, start);
    auto r2 = step(s2, {6, 6, 6}, ec);  // +d moves away
    for (int a = 0; a < kAgents; ++a) CHECK(r2[a] == -1);
  }

  SUBCASE("at the optimum every move is a regression") {
    EnvState s = reset(ph, EnvMode::kTrain, ph.gt_planes);
    auto r = step(s, {0, 2, 4}, ec);  // angle moves off the exact target
    for (int a = 0; a < kAgents; ++a) CHECK(r[a] == -1);
  }

  SUBCASE("symmetric straddle is a numeric tie") {
    // +0.05mm start and a -0.1mm action land at -0.05mm: |offset error| is
    // unchanged on the quantized grid, so the reward is exactly 0
    std::array<geom::PlaneParams, 3> mid;
    for (int i = 0; i < 3; ++i) {
      const auto& g = ph.gt_planes[i];
      mid[i] = geom::PlaneParams::from_values(g.zeta(), g.beta(), g.phi(), g.d() + 0.05);
    }
    EnvState s = reset(ph, EnvMode::kTrain, mid);
    auto r = step(s, {7, 7, 7}, ec);
    for (int a = 0; a < kAgents; ++a) CHECK(r[a] == 0);
  }
}

TEST_CASE("reward fuzz agrees with a direct distance recomputation") {
  phantom::Phantom ph = small_phantom(3);
  const EnvConfig ec = small_env();
  const double ds = d_scale_for(ec, ph);
  Rng rng = Rng::from_seed(11);
  EnvState s = reset(ph, EnvMode::kTrain, noisy_start(ph, 12));
  int checked = 0;
  for (int t = 0; t < 1000; ++t) {
    if (is_terminal(s, s.mode)) {
      s = reset(ph, EnvMode::kTrain, noisy_start(ph, 13 + static_cast<std::uint64_t>(t)));
    }
    std::array<int, 3> acts;
    std::array<geom::PlaneParams, 3> before;
    for (int a = 0; a < kAgents; ++a) {
      acts[a] = static_cast<int>(rng.next_int(8));
      before[a] = s.history[a][2];
    }
    auto r = step(s, acts, ec);
    for (int a = 0; a < kAgents; ++a) {
      const double d0 = geom::plane_distance(before[a], ph.gt_planes[a], ds);
      const double d1 = geom::plane_distance(s.history[a][2], ph.gt_planes[a], ds);
      const int want = d0 > d1 ? 1 : (d0 < d1 ? -1 : 0);
      CHECK(r[a] == want);
      ++checked;
    }
  }
  CHECK(checked == 3000);
}

TEST_CASE("episodes run exactly the fixed step budget") {
  phantom::Phantom ph = small_phantom(4);
  const EnvConfig ec = small_env();

  EnvState tr = reset(ph, EnvMode::kTrain, noisy_start(ph, 21));
  CHECK(!is_terminal(tr, EnvMode::kTrain));
  for (int t = 0; t < kTrainSteps; ++t) {
    CHECK(!is_terminal(tr, EnvMode::kTrain));
    step(tr, {0, 0, 0}, ec);
  }
  CHECK(tr.step == 50);
  CHECK(is_terminal(tr, EnvMode::kTrain));
  CHECK_THROWS_AS(step(tr, {0, 0, 0}, ec), TerminalStateStep);

  EnvState ev = reset(ph, EnvMode::kEval, noisy_start(ph, 22));
  for (int t = 0; t < kEvalSteps; ++t) step(ev, {1, 1, 1}, ec);
  CHECK(ev.step == 30);
  CHECK(is_terminal(ev, EnvMode::kEval));
  CHECK_THROWS_AS(step(ev, {1, 1, 1}, ec), TerminalStateStep);

  EnvState b = reset(ph, EnvMode::kTrain, noisy_start(ph, 23));
  b.step = 49;
  CHECK(!is_terminal(b, EnvMode::kTrain));
  b.step = 50;
  CHECK(is_terminal(b, EnvMode::kTrain));
  b.step = 30;
  CHECK(is_terminal(b, EnvMode::kEval));
  CHECK(!is_terminal(b, EnvMode::kTrain));

  b.step = 50;
  CHECK_THROWS_AS(step(b, {0, 0, 9}, ec), TerminalStateStep);  // terminal wins first
  b.step = 0;
  CHECK_THROWS_AS(step(b, {0, 0, 9}, ec), InvalidConfig);
}

TEST_CASE("distance-greedy oracle walks the error down") {
  const EnvConfig ec = small_env();
  int total = 0, down = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    phantom::Phantom ph = small_phantom(40 + seed);
    const double ds = d_scale_for(ec, ph);
    std::vector<const phantom::Phantom*> self{&ph};
    phantom::Atlas atlas = phantom::compute_atlas(self);
    Rng rng = Rng::from_seed(50 + seed);
    auto start = phantom::warm_start(ph, phantom::WarmStartMode::kAlign, {}, &atlas, rng);
    EnvState s = reset(ph, EnvMode::kEval, start);
    while (!is_terminal(s, s.mode)) {
      std::array<int, 3> acts;
      double before = 0, after = 0;
      for (int a = 0; a < kAgents; ++a) {
        acts[a] = oracle_action(s, a, ec);
        before += geom::plane_distance(s.history[a][2], ph.gt_planes[a], ds);
      }
      step(s, acts, ec);
      for (int a = 0; a < kAgents; ++a) {
        after += geom::plane_distance(s.history[a][2], ph.gt_planes[a], ds);
      }
      ++total;
      if (after <= before) ++down;
    }
  }
  CHECK(total == 5 * kEvalSteps);
  CHECK(static_cast<double>(down) / total >= 0.95);
}

TEST_CASE("replay buffer is a strict FIFO ring with max-priority inserts") {
  auto make = [](float tag) {
    Transition t;
    t.obs = TensorF({1}, {tag});
    t.next_obs = TensorF({1}, {tag});
    t.rewards = {tag, 0, 0};
    return t;
  };

  ReplayBuffer buf(5);
  for (int i = 0; i < 7; ++i) buf.push(make(static_cast<float>(i)));
  CHECK(buf.size() == 5);
  // slots 0,1 were the oldest and got overwritten by items 5,6
  CHECK(buf.at(0).rewards[0] == 5.0f);
  CHECK(buf.at(1).rewards[0] == 6.0f);
  CHECK(buf.at(2).rewards[0] == 2.0f);
  CHECK(buf.at(4).rewards[0] == 4.0f);

  for (std::size_t i = 0; i < 5; ++i) CHECK(buf.priority(i) == 1.0f);
  buf.update_priority(3, 4.0f);
  buf.push(make(7.0f));  // lands in slot 2 at the new running max
  CHECK(buf.at(2).rewards[0] == 7.0f);
  CHECK(buf.priority(2) == 4.0f);

  Rng rng = Rng::from_seed(3);
  CHECK_THROWS_AS(buf.sample_uniform(6, rng), EmptyBuffer);
  CHECK_THROWS_AS(ReplayBuffer(3).sample_proportional(1, rng), EmptyBuffer);

  auto idx = buf.sample_uniform(5, rng);
  for (auto i : idx) CHECK(i < 5);
}

TEST_CASE("equal priorities sample uniformly, unequal ones proportionally") {
  auto blank = [] {
    Transition t;
    t.obs = TensorF({1});
    t.next_obs = TensorF({1});
    return t;
  };

  SUBCASE("chi-square on equal priorities") {
    ReplayBuffer buf(10);
    for (int i = 0; i < 10; ++i) buf.push(blank());
    Rng rng = Rng::from_seed(8);
    std::vector<int> counts(10, 0);
    const int draws = 100000;
    for (int i = 0; i < draws; i += 10) {
      for (auto k : buf.sample_proportional(10, rng)) ++counts[k];
    }
    const double expect = draws / 10.0;
    double chi2 = 0;
    for (int c : counts) chi2 += (c - expect) * (c - expect) / expect;
    CHECK(chi2 < 21.67);  // chi-square df=9 critical value at p=0.01
  }

  SUBCASE("proportional sampling tracks priority^0.6") {
    ReplayBuffer buf(2);
    buf.push(blank());
    buf.push(blank());
    buf.update_priority(0, 1.0f);
    buf.update_priority(1, 8.0f);
    Rng rng = Rng::from_seed(9);
    int hi = 0;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
      if (buf.sample_proportional(1, rng)[0] == 1) ++hi;
    }
    // 8^0.6 / (1 + 8^0.6) = 0.7773
    const double want = std::pow(8.0, 0.6) / (1.0 + std::pow(8.0, 0.6));
    CHECK(std::abs(static_cast<double>(hi) / draws - want) < 0.01);
  }
}

namespace {

// deterministic 5-state chain: action 0 steps left, 1 steps right, the rest
// stay put; reaching state 4 pays +1 and ends the episode
constexpr int kChainStates = 5;

int chain_next(int s, int a) {
  if (a == 0) return s > 0 ? s - 1 : 0;
  if (a == 1) return s < kChainStates - 1 ? s + 1 : s;
  return s;
}

float chain_reward(int s, int a) { return s == 3 && a == 1 ? 1.0f : 0.0f; }

std::vector<std::vector<double>> chain_q_star(double gamma) {
  std::vector<std::vector<double>> q(kChainStates, std::vector<double>(8, 0.0));
  for (int sweep = 0; sweep < 200; ++sweep) {
    for (int s = 0; s < kChainStates - 1; ++s) {
      for (int a = 0; a < 8; ++a) {
        const int sn = chain_next(s, a);
        double v = 0;
        if (sn != kChainStates - 1) {
          for (int an = 0; an < 8; ++an) v = std::max(v, q[sn][an]);
        }
        q[s][a] = chain_reward(s, a) + gamma * v;
      }
    }
  }
  return q;
}

TensorF chain_obs(int s) {
  TensorF t({3 * kChainStates});
  for (int a = 0; a < 3; ++a) t.v[a * kChainStates + s] = 1.0f;
  return t;
}

ForwardFn chain_net(ParamStore& store) {
  return [&store](Graph& g, Graph::Id obs, const nas::ForwardOpt& o) {
    std::array<Graph::Id, 3> q;
    for (int a = 0; a < 3; ++a) {
      auto* w = store.find("agent" + std::to_string(a) + ".w");
      auto wid = o.weights_as_params ? g.param(*w) : g.input_ref(w->value);
      q[a] = g.linear(g.slice_cols(obs, a * kChainStates, kChainStates), wid, std::nullopt);
    }
    return q;
  };
}

}  // namespace

TEST_CASE("ddqn learns the chain mdp to the value-iteration fixed point") {
  const double gamma = 0.9;
  const auto q_star = chain_q_star(gamma);
  // sanity: the closed-form ladder toward the +1 transition
  CHECK(q_star[3][1] == doctest::Approx(1.0));
  CHECK(q_star[2][1] == doctest::Approx(0.9));
  CHECK(q_star[3][2] == doctest::Approx(0.9));  // stay, then collect later

  ParamStore online_store, target_store;
  for (int a = 0; a < 3; ++a) {
    online_store.create("agent" + std::to_string(a) + ".w", {8, kChainStates});
    target_store.create("agent" + std::to_string(a) + ".w", {8, kChainStates});
  }
  target_store.copy_values_from(online_store);
  ForwardFn online = chain_net(online_store);
  ForwardFn target = chain_net(target_store);

  ReplayBuffer buf(4000);
  Rng rng = Rng::from_seed(1234);
  int s = 0;
  int ep_len = 0;
  for (int t = 0; t < 4000; ++t) {
    if (ep_len == 0) s = static_cast<int>(rng.next_int(4));
    const int act = static_cast<int>(rng.next_int(8));
    const int sn = chain_next(s, act);
    Transition tr;
    tr.obs = chain_obs(s);
    tr.next_obs = chain_obs(sn);
    tr.actions = {act, act, act};
    const float r = chain_reward(s, act);
    tr.rewards = {r, r, r};
    tr.terminal = sn == kChainStates - 1;
    buf.push(std::move(tr));
    ++ep_len;
    if (tr.terminal || ep_len > 16) {
      ep_len = 0;
    } else {
      s = sn;
    }
  }

  nn::Adam opt(0.01);
  nas::ForwardOpt train_opt;
  train_opt.weights_as_params = true;
  for (int it = 0; it < 1500; ++it) {
    auto idx = buf.sample_proportional(32, rng);
    std::vector<const Transition*> batch;
    for (auto i : idx) batch.push_back(&buf.at(i));
    Graph g;
    auto res = ddqn_loss(g, batch, online, target, gamma, train_opt);
    g.backward(res.loss);
    opt.step(online_store);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      buf.update_priority(idx[k], std::abs(res.td[k]) + 1e-3f);
    }
    if ((it + 1) % 150 == 0) target_store.copy_values_from(online_store);
  }

  // read the learned tables through the net itself
  double worst = 0;
  for (int st = 0; st < kChainStates - 1; ++st) {
    Graph g(false);
    TensorF o = chain_obs(st);
    o.shape.insert(o.shape.begin(), 1);
    auto q = chain_net(online_store)(g, g.input(o), nas::ForwardOpt{});
    for (int a = 0; a < 3; ++a) {
      const TensorF& row = g.val(q[a]);
      for (int act = 0; act < 8; ++act) {
        worst = std::max(worst, std::abs(row.v[act] - q_star[st][act]));
      }
    }
  }
  CHECK(worst < 0.05);
}

TEST_CASE("ddqn loss hand cases") {
  auto fixed_net = [](std::array<float, 2> row) {
    return ForwardFn([row](Graph& g, Graph::Id obs, const nas::ForwardOpt&) {
      const int n = g.val(obs).shape[0];
      TensorF t({n, 2});
      for (int i = 0; i < n; ++i) {
        t.v[i * 2] = row[0];
        t.v[i * 2 + 1] = row[1];
      }
      auto id = g.input(t);
      return std::array<Graph::Id, 3>{id, id, id};
    });
  };

  Transition tr;
  tr.obs = TensorF({1});
  tr.next_obs = TensorF({1});
  std::vector<const Transition*> batch{&tr};

  SUBCASE("decoupled target: online picks the action, target prices it") {
    tr.actions = {0, 0, 0};
    tr.rewards = {0.5f, 0.5f, 0.5f};
    // online argmax at s' is action 1; target values action 1 at 3, its own
    // (ignored) maximum sits at action 0
    ForwardFn online = fixed_net({1.0f, 2.0f});
    ForwardFn target = fixed_net({10.0f, 3.0f});
    Graph g;
    auto res = ddqn_loss(g, batch, online, target, 0.5, nas::ForwardOpt{});
    // y = 0.5 + 0.5*3 = 2, Q(s,0) = 1, loss = (2-1)^2
    CHECK(g.val(res.loss).v[0] == doctest::Approx(1.0));
    CHECK(res.td[0] == doctest::Approx(1.0));
  }

  SUBCASE("gamma 0 reduces to immediate reward error") {
    tr.actions = {0, 1, 0};
    tr.rewards = {1.0f, 0.0f, -1.0f};
    ForwardFn zeros = fixed_net({0.0f, 0.0f});
    Graph g;
    auto res = ddqn_loss(g, batch, zeros, zeros, 0.0, nas::ForwardOpt{});
    CHECK(g.val(res.loss).v[0] == doctest::Approx(2.0 / 3.0));
    CHECK(res.td[0] == doctest::Approx(0.0));
  }

  SUBCASE("terminal transitions ignore the bootstrap") {
    tr.actions = {1, 1, 1};
    tr.rewards = {-1.0f, -1.0f, -1.0f};
    tr.terminal = true;
    ForwardFn online = fixed_net({0.0f, 0.0f});
    ForwardFn target = fixed_net({100.0f, 100.0f});
    Graph g;
    auto res = ddqn_loss(g, batch, online, target, 0.9, nas::ForwardOpt{});
    CHECK(g.val(res.loss).v[0] == doctest::Approx(1.0));
    CHECK(res.td[0] == doctest::Approx(-1.0));
  }

  SUBCASE("rejects empty batches and bad discounts") {
    std::vector<const Transition*> none;
    ForwardFn net = fixed_net({0.0f, 0.0f});
    Graph g;
    CHECK_THROWS_AS(ddqn_loss(g, none, net, net, 0.9, nas::ForwardOpt{}), EmptyBatch);
    CHECK_THROWS_AS(ddqn_loss(g, batch, net, net, 1.0, nas::ForwardOpt{}), InvalidConfig);
    CHECK_THROWS_AS(ddqn_loss(g, batch, net, net, -0.1, nas::ForwardOpt{}), InvalidConfig);
  }
}
