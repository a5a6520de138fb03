#include "planeloc/nn/gradcheck.hpp"

#include <map>
#include <memory>
#include <numeric>

#include "planeloc/rng.hpp"

namespace planeloc::nn {

namespace {

TensorD randn(Rng& r, std::vector<int> shape, double scale = 1.0) {
  TensorD t(std::move(shape));
  for (auto& v : t.v) v = r.normal() * scale;
  return t;
}

// Values kept away from relu/abs kinks so central differences stay valid.
TensorD randn_off_kink(Rng& r, std::vector<int> shape) {
  TensorD t = randn(r, std::move(shape));
  for (auto& v : t.v) {
    if (v > -0.05 && v < 0.05) v += v >= 0 ? 0.1 : -0.1;
  }
  return t;
}

// All-distinct values with gaps far larger than the FD step, so pooling
// argmaxes cannot flip under perturbation.
TensorD distinct_values(Rng& r, std::vector<int> shape) {
  TensorD t(std::move(shape));
  std::vector<std::size_t> perm(t.size());
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size(); i > 1; --i) {
    std::swap(perm[i - 1], perm[static_cast<std::size_t>(r.next_int(static_cast<int>(i)))]);
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    t.v[i] = (static_cast<double>(perm[i]) - static_cast<double>(t.size()) / 2.0) * 0.137;
  }
  return t;
}

double softmax_weighted(const std::vector<double>& z, const std::vector<double>& c) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  double denom = 0;
  for (double v : z) denom += std::exp(v - mx);
  double out = 0;
  for (std::size_t i = 0; i < z.size(); ++i) out += c[i] * std::exp(z[i] - mx) / denom;
  return out;
}

struct Collector {
  std::vector<GradCheckCase> order;
  std::map<std::string, std::size_t> index;

  void merge(const GradCheckCase& c) {
    auto it = index.find(c.name);
    if (it == index.end()) {
      index[c.name] = order.size();
      order.push_back(c);
      return;
    }
    GradCheckCase& dst = order[it->second];
    dst.max_rel_err = std::max(dst.max_rel_err, c.max_rel_err);
    dst.checked += c.checked;
    dst.pass = dst.pass && c.pass;
  }
};

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed, int variants, double tol) {
  Collector col;
  Rng root = Rng::from_seed(seed).split("gradcheck");

  auto weigh = [](GraphD& g, GraphD::Id x, const TensorD& c) {
    return g.reduce_sum(g.mul(x, g.input(c)));
  };

  for (int vi = 0; vi < variants; ++vi) {
    Rng rv = root.split(static_cast<std::uint64_t>(vi));

    {  // elementwise unary
      Rng r = rv.split("unary");
      const int n = 2 + r.next_int(3), k = 2 + r.next_int(5);
      TensorD c = randn(r, {n, k});
      col.merge(fd_check(
          "relu",
          [&](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return weigh(g, g.relu(xs[0]), c);
          },
          {randn_off_kink(r, {n, k})}, tol));
      col.merge(fd_check(
          "sigmoid",
          [&](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return weigh(g, g.sigmoid(xs[0]), c);
          },
          {randn(r, {n, k})}, tol));
      col.merge(fd_check(
          "tanh",
          [&](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return weigh(g, g.tanh_(xs[0]), c);
          },
          {randn(r, {n, k})}, tol));
    }

    {  // elementwise binary + scale + add_all
      Rng r = rv.split("binary");
      const int n = 2 + r.next_int(3), k = 2 + r.next_int(4);
      TensorD c = randn(r, {n, k});
      const double sc = r.uniform(-2.0, 2.0);
      col.merge(fd_check(
          "add",
          [&](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return weigh(g, g.add(xs[0], xs[1]), c);
          },
          {randn(r, {n, k}), randn(r, {n, k})}, tol));
      col.merge(fd_check(
          "sub",
          [&](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return weigh(g, g.sub(xs[0], xs[1]), c);
          },
          {randn(r, {n, k}), randn(r, {n, k})}, tol));
      col.merge(fd_check(
          "mul",
          [&](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return weigh(g, g.mul(xs[0], xs[1]), c);
          },
          {randn(r, {n, k}), randn(r, {n, k})}, tol));
      col.merge(fd_check(
          "scale",
          [&](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return weigh(g, g.scale(xs[0], sc), c);
          },
          {randn(r, {n, k})}, tol));
      col.merge(fd_check(
          "add_all",
          [&](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return weigh(g, g.add_all({xs[0], xs[1], xs[2]}), c);
          },
          {randn(r, {n, k}), randn(r, {n, k}), randn(r, {n, k})}, tol));
    }

    {  // structure ops
      Rng r = rv.split("structure");
      const int n = 2 + r.next_int(2), k = 3 + r.next_int(3);
      TensorD c2 = randn(r, {n, 2 * k});
      col.merge(fd_check(
          "reshape",
          [&](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return weigh(g, g.reshape(xs[0], {n, 2 * k}), c2);
          },
          {randn(r, {n, k, 2})}, tol));
      col.merge(fd_check(
          "concat",
          [&](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return weigh(g, g.concat({xs[0], xs[1]}, 1), c2);
          },
          {randn(r, {n, k}), randn(r, {n, k})}, tol));
      const int start = r.next_int(k);
      const int len = 1 + r.next_int(k - start);
      TensorD cs = randn(r, {n, len});
      col.merge(fd_check(
          "slice_cols",
          [&](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return weigh(g, g.slice_cols(xs[0], start, len), cs);
          },
          {randn(r, {n, k})}, tol));
      const int s = 2 + r.next_int(3), t = r.next_int(s);
      TensorD cm = randn(r, {n, k});
      col.merge(fd_check(
          "slice_mid",
          [&](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return weigh(g, g.slice_mid(xs[0], t), cm);
          },
          {randn(r, {n, s, k})}, tol));
      const int h = 3 + r.next_int(4), w = 3 + r.next_int(4);
      TensorD css = randn(r, {n, 2, (h + 1) / 2, (w + 1) / 2});
      col.merge(fd_check(
          "subsample2",
          [&](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return weigh(g, g.subsample2(xs[0]), css);
          },
          {randn(r, {n, 2, h, w})}, tol));
    }

    {  // conv2d over kernel/stride/dilation/group variants
      struct CV {
        int k, stride, pad, dil, groups, cin, cout;
        bool bias;
      };
      const CV cvs[] = {
          {3, 1, 1, 1, 1, 3, 2, true}, {3, 2, 1, 1, 1, 3, 2, true},
          {3, 1, 2, 2, 1, 2, 2, false}, {5, 1, 4, 2, 1, 2, 1, true},
          {3, 1, 1, 1, 3, 3, 3, false},  // depthwise
          {1, 1, 0, 1, 2, 4, 4, true},   // grouped pointwise
      };
      for (const CV& cv : cvs) {
        Rng r = rv.split("conv").split(static_cast<std::uint64_t>(&cv - cvs));
        const int n = 1 + r.next_int(2);
        const int h = 5 + r.next_int(3), w = 5 + r.next_int(3);
        kernels::ConvSpec cs{cv.stride, cv.pad, cv.dil, cv.groups};
        const int ho = kernels::conv_out_extent(h, cv.k, cv.stride, cv.pad, cv.dil);
        const int wo = kernels::conv_out_extent(w, cv.k, cv.stride, cv.pad, cv.dil);
        TensorD c = randn(r, {n, cv.cout, ho, wo});
        std::vector<TensorD> leaves;
        leaves.push_back(randn(r, {n, cv.cin, h, w}));
        leaves.push_back(randn(r, {cv.cout, cv.cin / cv.groups, cv.k, cv.k}, 0.5));
        if (cv.bias) leaves.push_back(randn(r, {cv.cout}));
        const bool bias = cv.bias;
        col.merge(fd_check(
            "conv2d",
            [&, cs, bias](GraphD& g, const std::vector<GraphD::Id>& xs) {
              std::optional<GraphD::Id> b;
              if (bias) b = xs[2];
              return weigh(g, g.conv2d(xs[0], xs[1], b, cs), c);
            },
            std::move(leaves), tol));
      }
    }

    {  // linear
      Rng r = rv.split("linear");
      const int n = 2 + r.next_int(3), in = 2 + r.next_int(4), out = 1 + r.next_int(4);
      TensorD c = randn(r, {n, out});
      col.merge(fd_check(
          "linear",
          [&](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return weigh(g, g.linear(xs[0], xs[1], xs[2]), c);
          },
          {randn(r, {n, in}), randn(r, {out, in}), randn(r, {out})}, tol));
    }

    {  // pooling
      for (int stride = 1; stride <= 2; ++stride) {
        Rng r = rv.split("pool").split(static_cast<std::uint64_t>(stride));
        const int n = 1 + r.next_int(2), cch = 1 + r.next_int(2);
        const int h = 4 + r.next_int(4), w = 4 + r.next_int(4);
        const int ho = (h + 2 - 3) / stride + 1, wo = (w + 2 - 3) / stride + 1;
        TensorD c = randn(r, {n, cch, ho, wo});
        col.merge(fd_check(
            "maxpool3",
            [&, stride](GraphD& g, const std::vector<GraphD::Id>& xs) {
              return weigh(g, g.maxpool3(xs[0], stride), c);
            },
            {distinct_values(r, {n, cch, h, w})}, tol));
        col.merge(fd_check(
            "avgpool3",
            [&, stride](GraphD& g, const std::vector<GraphD::Id>& xs) {
              return weigh(g, g.avgpool3(xs[0], stride), c);
            },
            {randn(r, {n, cch, h, w})}, tol));
      }
    }

    {  // batchnorm, training and eval paths
      Rng r = rv.split("batchnorm");
      const int n = 2 + r.next_int(2), cch = 1 + r.next_int(3);
      const int h = 3 + r.next_int(3), w = 3 + r.next_int(3);
      TensorD c = randn(r, {n, cch, h, w});
      auto rm = std::make_shared<ParamT<double>>();
      auto rva = std::make_shared<ParamT<double>>();
      rm->value = randn(r, {cch}, 0.3);
      rva->value = TensorD({cch});
      for (auto& v : rva->value.v) v = r.uniform(0.5, 2.0);
      col.merge(fd_check(
          "batchnorm_train",
          [&, rm, rva](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return weigh(g, g.batchnorm(xs[0], xs[1], xs[2], *rm, *rva, true, false), c);
          },
          {randn(r, {n, cch, h, w}), randn(r, {cch}, 0.5), randn(r, {cch}, 0.5)}, tol));
      col.merge(fd_check(
          "batchnorm_eval",
          [&, rm, rva](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return weigh(g, g.batchnorm(xs[0], xs[1], xs[2], *rm, *rva, false, false), c);
          },
          {randn(r, {n, cch, h, w}), randn(r, {cch}, 0.5), randn(r, {cch}, 0.5)}, tol));
    }

    {  // heads: gap, softmax, select_col, reductions
      Rng r = rv.split("head");
      const int n = 2 + r.next_int(2), cch = 2 + r.next_int(3);
      const int h = 3 + r.next_int(2), w = 3 + r.next_int(2);
      TensorD cg = randn(r, {n, cch});
      col.merge(fd_check(
          "global_avg_pool",
          [&](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return weigh(g, g.global_avg_pool(xs[0]), cg);
          },
          {randn(r, {n, cch, h, w})}, tol));
      const int k = 3 + r.next_int(5);
      TensorD csm = randn(r, {n, k});
      col.merge(fd_check(
          "softmax",
          [&](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return weigh(g, g.softmax(xs[0]), csm);
          },
          {randn(r, {n, k})}, tol));
      std::vector<int> idx(static_cast<std::size_t>(n));
      for (auto& ix : idx) ix = r.next_int(k);
      TensorD csel = randn(r, {n});
      col.merge(fd_check(
          "select_col",
          [&, idx](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return weigh(g, g.select_col(xs[0], idx), csel);
          },
          {randn(r, {n, k})}, tol));
      col.merge(fd_check(
          "reduce_mean",
          [&](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return g.reduce_mean(g.mul(xs[0], xs[0]));
          },
          {randn(r, {n, k})}, tol));
      col.merge(fd_check(
          "reduce_sum",
          [&](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return g.reduce_sum(g.mul(xs[0], xs[0]));
          },
          {randn(r, {n, k})}, tol));
    }

    {  // lstm cell composite
      Rng r = rv.split("lstm");
      const int n = 1 + r.next_int(2), in = 2 + r.next_int(3), hid = 2 + r.next_int(3);
      TensorD c = randn(r, {n, 2 * hid});
      col.merge(fd_check(
          "lstm_cell",
          [&, hid](GraphD& g, const std::vector<GraphD::Id>& xs) {
            auto [hn, cn] = lstm_cell(g, xs[0], xs[1], xs[2], xs[3], xs[4], xs[5], xs[6], hid);
            return weigh(g, g.concat({hn, cn}, 1), c);
          },
          {randn(r, {n, in}), randn(r, {n, hid}), randn(r, {n, hid}),
           randn(r, {4 * hid, in}, 0.4), randn(r, {4 * hid, hid}, 0.4), randn(r, {4 * hid}, 0.2),
           randn(r, {4 * hid}, 0.2)},
          tol));
    }

    {  // straight-through gumbel: backward vs FD of the softened path
      const double taus[] = {10.0, 1.0, 0.5};
      Rng r = rv.split("gumbel");
      const int k = 4 + r.next_int(6);
      const double tau = taus[vi % 3];
      TensorD logits = randn(r, {k});
      std::vector<double> noise(static_cast<std::size_t>(k));
      for (auto& nz : noise) nz = r.gumbel();
      std::vector<double> c(static_cast<std::size_t>(k));
      for (auto& cv : c) cv = r.normal();

      GraphD g(true);
      auto l = g.leaf(logits);
      std::vector<double> cfloat = c;
      TensorD ct({k}, cfloat);
      g.backward(g.reduce_sum(g.mul(g.gumbel_softmax_st(l, tau, noise), g.input(ct))));
      const TensorD& an = g.grad_of(l);

      auto surrogate = [&](const std::vector<double>& lv) {
        std::vector<double> z(lv.size());
        for (std::size_t i = 0; i < lv.size(); ++i) z[i] = (lv[i] + noise[i]) / tau;
        return softmax_weighted(z, c);
      };
      GradCheckCase gc;
      gc.name = "gumbel_softmax_st";
      const double h = 1e-5;
      std::vector<double> lv = logits.v;
      for (int i = 0; i < k; ++i) {
        const double keep = lv[static_cast<std::size_t>(i)];
        lv[static_cast<std::size_t>(i)] = keep + h;
        const double fp = surrogate(lv);
        lv[static_cast<std::size_t>(i)] = keep - h;
        const double fm = surrogate(lv);
        lv[static_cast<std::size_t>(i)] = keep;
        const double fd = (fp - fm) / (2.0 * h);
        const double a = an.v[static_cast<std::size_t>(i)];
        gc.max_rel_err = std::max(
            gc.max_rel_err, std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)}));
        ++gc.checked;
      }
      gc.pass = gc.max_rel_err < tol;
      col.merge(gc);
    }

    {  // gdas edge, soft mode is plainly differentiable
      Rng r = rv.split("gdas_soft");
      const int k = 3 + r.next_int(5), m = 2 + r.next_int(4);
      const int kstar = r.next_int(k);
      TensorD c = randn(r, {m});
      col.merge(fd_check(
          "gdas_edge_soft",
          [&, kstar](GraphD& g, const std::vector<GraphD::Id>& xs) {
            return weigh(g, g.gdas_edge(xs[0], xs[1], kstar, true), c);
          },
          {randn(r, {m}), randn(r, {k})}, tol));
    }

    {  // gdas edge, hard mode: st grads must match the soft surrogate,
      // op_out grads pass through unchanged
      Rng r = rv.split("gdas_hard");
      const int k = 3 + r.next_int(5), m = 2 + r.next_int(4);
      const int kstar = r.next_int(k);
      TensorD op_out = randn(r, {m});
      TensorD st = randn(r, {k});
      TensorD c = randn(r, {m});

      GraphD g(true);
      auto o = g.leaf(op_out);
      auto s = g.leaf(st);
      g.backward(g.reduce_sum(g.mul(g.gdas_edge(o, s, kstar, false), g.input(c))));

      auto surrogate = [&](const std::vector<double>& sv) {
        double rest = 0;
        for (int i = 0; i < k; ++i) {
          if (i != kstar) rest += sv[static_cast<std::size_t>(i)];
        }
        double out = 0;
        for (int i = 0; i < m; ++i) {
          out += c.v[static_cast<std::size_t>(i)] *
                 (sv[static_cast<std::size_t>(kstar)] * op_out.v[static_cast<std::size_t>(i)] +
                  rest);
        }
        return out;
      };
      GradCheckCase gc;
      gc.name = "gdas_edge_hard";
      const double h = 1e-5;
      std::vector<double> sv = st.v;
      const TensorD& gs = g.grad_of(s);
      for (int i = 0; i < k; ++i) {
        const double keep = sv[static_cast<std::size_t>(i)];
        sv[static_cast<std::size_t>(i)] = keep + h;
        const double fp = surrogate(sv);
        sv[static_cast<std::size_t>(i)] = keep - h;
        const double fm = surrogate(sv);
        sv[static_cast<std::size_t>(i)] = keep;
        const double fd = (fp - fm) / (2.0 * h);
        const double a = gs.v[static_cast<std::size_t>(i)];
        gc.max_rel_err = std::max(
            gc.max_rel_err, std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)}));
        ++gc.checked;
      }
      const TensorD& go = g.grad_of(o);
      for (int i = 0; i < m; ++i) {
        const double a = go.v[static_cast<std::size_t>(i)];
        const double expect = c.v[static_cast<std::size_t>(i)];
        gc.max_rel_err =
            std::max(gc.max_rel_err,
                     std::abs(a - expect) / std::max({1.0, std::abs(a), std::abs(expect)}));
        ++gc.checked;
      }
      gc.pass = gc.max_rel_err < tol;
      col.merge(gc);
    }
  }

  return col.order;
}

}  // namespace planeloc::nn
