#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <vector>

#include "planeloc/collab.hpp"
#include "planeloc/nn/gradcheck.hpp"

using namespace planeloc;
using namespace planeloc::collab;
using nn::Graph;
using nn::ParamStore;
using nn::TensorD;
using nn::TensorF;

namespace {

TensorF random_rows(Rng& rng, int n) {
  TensorF t({n, nas::kNumActions});
  for (auto& v : t.v) v = static_cast<float>(rng.normal());
  return t;
}

std::array<TensorF, 3> eval_calibrated(ParamStore& w, const CalibConfig& cfg,
                                       const std::array<TensorF, 3>& q) {
  Graph g(false);
  std::array<Graph::Id, 3> ids{g.input(q[0]), g.input(q[1]), g.input(q[2])};
  const auto out = calibrate(g, w, cfg, ids);
  return {g.val(out[0]), g.val(out[1]), g.val(out[2])};
}

void randomize(ParamStore& w, Rng& rng, double scale) {
  for (const auto& p : w.items()) {
    for (auto& v : p->value.v) v = static_cast<float>(rng.normal() * scale);
  }
}

bool same_bits(const ParamStore& a, const ParamStore& b) {
  const auto& ia = a.items();
  const auto& ib = b.items();
  if (ia.size() != ib.size()) return false;
  for (std::size_t i = 0; i < ia.size(); ++i) {
    if (ia[i]->name != ib[i]->name) return false;
    if (std::memcmp(ia[i]->value.v.data(), ib[i]->value.v.data(),
                    ia[i]->value.v.size() * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

nas::NetConfig tiny_net() {
  nas::NetConfig n;
  n.obs_h = 12;
  n.obs_w = 12;
  n.stem_channels = 2;
  return n;
}

nas::DiscreteArch conv_arch() {
  nas::DiscreteArch arch;
  for (auto& cell : arch.cells) {
    for (int node = 0; node < nas::kNodeCount; ++node) {
      for (int j = 0; j < nas::kRetainedPerNode; ++j) {
        cell.picks[node][j] = {nas::edge_index(node, j), nas::OpKind::kConv3};
      }
    }
  }
  return arch;
}

marl::Transition random_transition(Rng& rng, const nas::NetConfig& net) {
  marl::Transition t;
  t.obs = TensorF({net.obs_channels, net.obs_h, net.obs_w});
  t.next_obs = TensorF({net.obs_channels, net.obs_h, net.obs_w});
  for (auto& v : t.obs.v) v = static_cast<float>(rng.normal() * 0.5);
  for (auto& v : t.next_obs.v) v = static_cast<float>(rng.normal() * 0.5);
  for (int a = 0; a < 3; ++a) {
    t.actions[a] = static_cast<int>(rng.next_int(8));
    t.rewards[a] = t.actions[a] == 0 ? 1.0f : -1.0f;
  }
  return t;
}

double ddqn_loss_value(train::DerivedTrainer& base,
                       const std::vector<const marl::Transition*>& batch, double gamma,
                       const marl::CalibrateFn& calib) {
  marl::ForwardFn online = [&](Graph& g, Graph::Id obs, const nas::ForwardOpt& o) {
    return nas::derived_forward(g, base.online(), base.net(), base.arch(), obs, o);
  };
  marl::ForwardFn tgt = [&](Graph& g, Graph::Id obs, const nas::ForwardOpt& o) {
    return nas::derived_forward(g, base.target(), base.net(), base.arch(), obs, o);
  };
  Graph g(false);
  const auto res = marl::ddqn_loss(g, batch, online, tgt, gamma, nas::ForwardOpt{}, calib);
  return g.val(res.loss).v[0];
}

}  // namespace

TEST_CASE("zeroed calibrators add the projection bias to every row") {
  const CalibConfig cfg{5, 2};
  ParamStore w;
  Rng init(3);
  create_calib_params(w, cfg, init);
  for (const auto& p : w.items()) std::fill(p->value.v.begin(), p->value.v.end(), 0.0f);
  auto* pb = w.find("collab.proj.b");
  REQUIRE(pb != nullptr);
  for (int k = 0; k < nas::kNumActions; ++k) pb->value.v[k] = 0.25f * (k + 1);

  Rng rng(9);
  const std::array<TensorF, 3> qa{random_rows(rng, 4), random_rows(rng, 4), random_rows(rng, 4)};
  const std::array<TensorF, 3> qb{random_rows(rng, 4), random_rows(rng, 4), random_rows(rng, 4)};
  const auto oa = eval_calibrated(w, cfg, qa);
  const auto ob = eval_calibrated(w, cfg, qb);
  for (int t = 0; t < 3; ++t) {
    for (int i = 0; i < 4; ++i) {
      for (int k = 0; k < nas::kNumActions; ++k) {
        const auto at = static_cast<std::size_t>(i * nas::kNumActions + k);
        // correction is exactly the bias, independent of input and position
        CHECK(oa[t].v[at] == qa[t].v[at] + 0.25f * (k + 1));
        CHECK(ob[t].v[at] == qb[t].v[at] + 0.25f * (k + 1));
      }
    }
  }
}

TEST_CASE("fresh calibrators pass q-values through bit for bit") {
  const CalibConfig cfg{};  // full size: hidden 64, 2 layers
  ParamStore w;
  Rng init(7);
  create_calib_params(w, cfg, init);
  // lstm weights are live, the projection starts zero
  CHECK(w.find("collab.l1.bw.w_hh") != nullptr);
  REQUIRE(w.items().size() == 18);

  Rng rng(11);
  const std::array<TensorF, 3> q{random_rows(rng, 3), random_rows(rng, 3), random_rows(rng, 3)};
  const auto out = eval_calibrated(w, cfg, q);
  for (int t = 0; t < 3; ++t) {
    CHECK(std::memcmp(out[t].v.data(), q[t].v.data(), q[t].v.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("generic parameters all receive gradients") {
  const CalibConfig cfg{6, 2};
  ParamStore w;
  Rng init(5);
  create_calib_params(w, cfg, init);
  randomize(w, init, 0.4);

  Rng rng(13);
  Graph g;
  std::array<Graph::Id, 3> ids{g.input(random_rows(rng, 2)), g.input(random_rows(rng, 2)),
                               g.input(random_rows(rng, 2))};
  const auto out = calibrate(g, w, cfg, ids);
  g.backward(g.add_all({g.reduce_mean(g.mul(out[0], out[0])),
                        g.reduce_mean(g.mul(out[1], out[1])),
                        g.reduce_mean(g.mul(out[2], out[2]))}));
  for (const auto& p : w.items()) {
    REQUIRE(p->grad_touched);
    double mag = 0;
    for (float v : p->grad.v) mag += std::abs(v);
    CHECK_MESSAGE(mag > 0.0, p->name);
  }
}

TEST_CASE("row order changes the calibrated output") {
  const CalibConfig cfg{8, 2};
  ParamStore w;
  Rng init(17);
  create_calib_params(w, cfg, init);
  randomize(w, init, 0.5);

  Rng rng(19);
  const TensorF a = random_rows(rng, 2), b = random_rows(rng, 2), c = random_rows(rng, 2);
  const auto o1 = eval_calibrated(w, cfg, {a, b, c});
  const auto o2 = eval_calibrated(w, cfg, {b, a, c});
  // row a moved from position 0 to 1; its correction must move with context
  double diff = 0;
  for (std::size_t i = 0; i < o1[0].v.size(); ++i) {
    diff = std::max(diff, static_cast<double>(std::abs(o1[0].v[i] - o2[1].v[i])));
  }
  CHECK(diff > 1e-6);
}

TEST_CASE("calibration gradients match finite differences") {
  const CalibConfig cfg{4, 2};
  const auto specs = calib_param_specs(cfg);
  Rng rng(23);
  std::vector<TensorD> leaves;
  for (const auto& s : specs) {
    TensorD t(s.shape);
    for (auto& v : t.v) v = rng.normal() * 0.5;
    leaves.push_back(std::move(t));
  }
  const std::size_t ntheta = leaves.size();
  for (int t = 0; t < 3; ++t) {
    TensorD q({2, nas::kNumActions});
    for (auto& v : q.v) v = rng.normal();
    leaves.push_back(std::move(q));
  }
  std::array<TensorD, 3> targets;
  for (auto& y : targets) {
    y = TensorD({2, nas::kNumActions});
    for (auto& v : y.v) v = rng.normal();
  }

  // squared-error head: the same quadratic shape the q-learning loss applies
  const auto res = nn::fd_check(
      "collab",
      [&](nn::GraphD& g, const std::vector<nn::GraphD::Id>& xs) {
        std::vector<nn::GraphD::Id> theta(xs.begin(), xs.begin() + ntheta);
        std::array<nn::GraphD::Id, 3> q{xs[ntheta], xs[ntheta + 1], xs[ntheta + 2]};
        const auto out = calibrate_nodes(g, theta, cfg, q);
        std::vector<nn::GraphD::Id> terms;
        for (int t = 0; t < 3; ++t) {
          auto d = g.sub(out[t], g.input(targets[t]));
          terms.push_back(g.reduce_mean(g.mul(d, d)));
        }
        return g.add_all(terms);
      },
      std::move(leaves), 1e-4);
  CHECK_MESSAGE(res.pass, res.max_rel_err);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("malformed inputs and parameter lists are rejected") {
  const CalibConfig cfg{4, 1};
  ParamStore w;
  Rng init(29);
  create_calib_params(w, cfg, init);

  Graph g(false);
  auto good = g.input(TensorF({2, nas::kNumActions}));
  auto narrow = g.input(TensorF({2, nas::kNumActions - 1}));
  auto tall = g.input(TensorF({3, nas::kNumActions}));
  CHECK_THROWS_AS(calibrate(g, w, cfg, {narrow, narrow, narrow}), ShapeMismatch);
  CHECK_THROWS_AS(calibrate(g, w, cfg, {good, good, tall}), ShapeMismatch);
  CHECK_THROWS_AS(calibrate_nodes(g, {good}, cfg, {good, good, good}), ShapeMismatch);
  CHECK_THROWS_AS(calibrate(g, w, CalibConfig{4, 2}, {good, good, good}),
                  NameOrShapeMismatch);
  CHECK_THROWS_AS(calib_param_specs(CalibConfig{0, 2}), InvalidConfig);
}

TEST_CASE("calibrator checkpoints round trip under their name prefix") {
  const CalibConfig cfg{6, 2};
  const auto dir = std::filesystem::temp_directory_path() / "planeloc_collab_ckpt";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "calib.ckpt").string();

  ParamStore mixed;
  Rng init(31);
  mixed.create("stem.w", {4, 4});
  create_calib_params(mixed, cfg, init);
  randomize(mixed, init, 0.3);
  nn::save_checkpoint(mixed, path);

  ParamStore theta;
  Rng init2(99);
  create_calib_params(theta, cfg, init2);
  nn::load_checkpoint(theta, path, "collab.", true);
  for (const auto& p : theta.items()) {
    const auto* src = mixed.find(p->name);
    REQUIRE(src != nullptr);
    CHECK(std::memcmp(p->value.v.data(), src->value.v.data(),
                      p->value.v.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("stage-2 steps move the calibrator and leave the trunk frozen") {
  const auto net = tiny_net();
  const auto arch = conv_arch();
  train::LoopConfig cfg;
  cfg.lr = 1e-3;
  cfg.batch_size = 4;
  cfg.target_sync = 2;
  Rng init(37);
  train::DerivedTrainer base(net, arch, cfg, init);
  const CalibConfig ccfg{8, 2};
  Rng cinit(41);
  CollabTrainer tr(base, ccfg, cfg, false, cinit);

  ParamStore online_before, target_before, theta_before;
  nas::create_derived_params(online_before, net, arch, init);
  nas::create_derived_params(target_before, net, arch, init);
  online_before.copy_values_from(base.online());
  target_before.copy_values_from(base.target());
  create_calib_params(theta_before, ccfg, init);
  theta_before.copy_values_from(tr.theta());

  marl::ReplayBuffer buf(64, 0.6);
  Rng rng(43);
  for (int i = 0; i < 16; ++i) buf.push(random_transition(rng, net));
  for (int k = 0; k < 3; ++k) CHECK(std::isfinite(tr.omega_step(buf, rng)));
  CHECK(tr.iters() == 3);

  CHECK(same_bits(base.online(), online_before));
  CHECK(same_bits(base.target(), target_before));
  CHECK_FALSE(same_bits(tr.theta(), theta_before));

  // the joint flag unfreezes the trunk
  Rng jinit(47);
  train::DerivedTrainer jbase(net, arch, cfg, jinit);
  ParamStore jbefore;
  nas::create_derived_params(jbefore, net, arch, jinit);
  jbefore.copy_values_from(jbase.online());
  Rng jcinit(53);
  CollabTrainer jtr(jbase, ccfg, cfg, true, jcinit);
  jtr.omega_step(buf, rng);
  CHECK_FALSE(same_bits(jbase.online(), jbefore));
}

TEST_CASE("the calibrator learns a cross-plane reward dependency the frozen trunk cannot") {
  const auto net = tiny_net();
  const auto arch = conv_arch();
  train::LoopConfig cfg;
  cfg.lr = 1e-2;
  cfg.batch_size = 16;
  Rng init(61);
  train::DerivedTrainer base(net, arch, cfg, init);

  // plane T's rewarded action depends only on plane S's q-row
  Rng rng(67);
  auto make_batch = [&](int count) {
    std::vector<marl::Transition> out;
    for (int i = 0; i < count; ++i) {
      marl::Transition t;
      t.obs = TensorF({net.obs_channels, net.obs_h, net.obs_w});
      t.next_obs = t.obs;
      for (auto& v : t.obs.v) v = static_cast<float>(rng.normal() * 0.5);
      t.terminal = true;  // y = r: the dependency sits wholly in the reward
      out.push_back(std::move(t));
    }
    // trunk q-rows for plane S, read in one batched eval pass
    TensorF stacked({count, net.obs_channels, net.obs_h, net.obs_w});
    const std::size_t item = out[0].obs.size();
    for (int i = 0; i < count; ++i) {
      std::copy(out[i].obs.v.begin(), out[i].obs.v.end(),
                stacked.v.begin() + i * static_cast<std::ptrdiff_t>(item));
    }
    Graph g(false);
    const auto heads = nas::derived_forward(g, base.online(), net, arch,
                                            g.input(std::move(stacked)), nas::ForwardOpt{});
    const TensorF& qs = g.val(heads[0]);
    std::vector<double> means(count);
    for (int i = 0; i < count; ++i) {
      double m = 0;
      for (int k = 0; k < nas::kNumActions; ++k) m += qs.v[i * nas::kNumActions + k];
      means[i] = m;
    }
    std::vector<double> sorted = means;
    std::nth_element(sorted.begin(), sorted.begin() + count / 2, sorted.end());
    const double median = sorted[count / 2];
    for (int i = 0; i < count; ++i) {
      const int want = means[i] > median ? 3 : 5;
      for (int a = 0; a < 3; ++a) out[i].actions[a] = static_cast<int>(rng.next_int(8));
      out[i].rewards = {0.0f, out[i].actions[1] == want ? 1.0f : -1.0f, 0.0f};
    }
    return out;
  };

  const auto train_set = make_batch(256);
  const auto held_out = make_batch(64);
  std::vector<const marl::Transition*> held;
  for (const auto& t : held_out) held.push_back(&t);

  const double before = ddqn_loss_value(base, held, cfg.gamma, nullptr);

  const CalibConfig ccfg{16, 2};
  Rng cinit(71);
  CollabTrainer tr(base, ccfg, cfg, false, cinit);
  marl::ReplayBuffer buf(512, 0.6);
  for (const auto& t : train_set) buf.push(t);
  Rng trng(73);
  for (int k = 0; k < 300; ++k) tr.omega_step(buf, trng);

  const double after = ddqn_loss_value(base, held, cfg.gamma, tr.calibrate_fn());
  CHECK(after < 0.9 * before);
  // disabled at eval, the trained calibrator leaves the base readout untouched
  CHECK(ddqn_loss_value(base, held, cfg.gamma, nullptr) == before);
}

TEST_CASE("stage-2 training leaves uncalibrated evaluation byte-identical") {
  std::vector<phantom::Phantom> vols;
  phantom::PhantomConfig pc;
  pc.dim = 24;
  for (std::uint64_t s = 200; vols.size() < 2; ++s) {
    try {
      vols.push_back(phantom::generate(pc, s));
    } catch (const Error&) {
    }
  }
  std::vector<const phantom::Phantom*> vp{&vols[0], &vols[1]};
  const auto atlas = phantom::compute_atlas(vp);

  train::LoopConfig cfg;
  cfg.env.obs_h = 12;
  cfg.env.obs_w = 12;
  cfg.lr = 1e-3;
  cfg.batch_size = 8;
  cfg.epochs = 1;
  cfg.grad_steps_per_episode = 2;
  Rng init(83);
  train::DerivedTrainer base(tiny_net(), conv_arch(), cfg, init);

  Rng ra(5);
  const auto before = train::evaluate(base.q_reader(), vp, atlas, cfg.env, cfg.warm, ra);

  Rng cinit(89);
  CollabTrainer tr(base, CalibConfig{8, 2}, cfg, false, cinit);
  Rng trng(97);
  const auto log = train_calibrator(tr, vp, vp, atlas, cfg, trng);
  REQUIRE(log.size() == 1);
  CHECK(std::isfinite(log[0].loss));

  Rng rb(5);
  const auto after = train::evaluate(base.q_reader(), vp, atlas, cfg.env, cfg.warm, rb);
  REQUIRE(after.rows.size() == before.rows.size());
  for (std::size_t i = 0; i < before.rows.size(); ++i) {
    for (int p = 0; p < 3; ++p) {
      CHECK(after.rows[i].ang[p] == before.rows[i].ang[p]);
      CHECK(after.rows[i].dis[p] == before.rows[i].dis[p]);
      CHECK(after.rows[i].ssim[p] == before.rows[i].ssim[p]);
    }
  }
}
