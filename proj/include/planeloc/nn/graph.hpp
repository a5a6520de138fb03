#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "planeloc/nn/kernels.hpp"
#include "planeloc/nn/params.hpp"
#include "planeloc/nn/tensor.hpp"

namespace planeloc::nn {

// Name of the op whose backward is deliberately corrupted, from
// PLANELOC_BREAK_BACKWARD; empty when the hook is unset.
const std::string& break_backward_target();

// Reverse-mode tape. Each op computes its value eagerly and records a
// backward closure; backward() walks the tape once in reverse creation
// order, so every op's gradient is accumulated exactly once. Graphs are
// built per forward pass and discarded.
//
// With recording off (or when no input reaches a trainable leaf) ops skip
// closure creation entirely, which makes pure-inference forwards cheap.
template <class T>
class GraphT {
 public:
  using Id = std::int32_t;

  explicit GraphT(bool recording = true) : recording_(recording) { nodes_.reserve(256); }

  Id input(TensorT<T> v) { return push(std::move(v), false); }

  // Differentiable non-param leaf; its gradient stays on the node (grad_of).
  Id leaf(TensorT<T> v) { return push(std::move(v), true); }

  // Non-owning constant leaf; caller keeps `v` alive for the graph's life.
  Id input_ref(const TensorT<T>& v) { return push_ref(v, false); }

  Id param(ParamT<T>& p) {
    Id id = push_ref(p.value, recording_);
    if (recording_) {
      ParamT<T>* pp = &p;
      nodes_[id].back = [id, pp](GraphT& g) {
        const TensorT<T>& gr = g.nodes_[id].grad;
        for (std::size_t i = 0; i < gr.size(); ++i) pp->grad.v[i] += gr.v[i];
        pp->grad_touched = true;
      };
    }
    return id;
  }

  const TensorT<T>& val(Id id) const { return nodes_[id].ref ? *nodes_[id].ref : nodes_[id].val; }
  const TensorT<T>& grad_of(Id id) const { return nodes_[id].grad; }
  bool needs_grad(Id id) const { return nodes_[id].needs_grad; }
  std::size_t node_count() const { return nodes_.size(); }

  void backward(Id root) {
    if (val(root).size() != 1) {
      throw ShapeMismatch("backward: root must be scalar, got " + shape_str(val(root).shape));
    }
    ensure_grad(root);
    nodes_[root].grad.v[0] = T(1);
    for (Id i = root; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0 || !n.back) continue;
      if (n.poisoned) {
        for (auto& g : n.grad.v) g *= T(1.001);
      }
      n.back(*this);
    }
  }

  // ---- elementwise ----

  Id relu(Id x) {
    const TensorT<T>& xv = val(x);
    TensorT<T> out(xv.shape);
    for (std::size_t i = 0; i < xv.size(); ++i) out.v[i] = xv.v[i] > T(0) ? xv.v[i] : T(0);
    Id id = push(std::move(out), needs_grad(x));
    record(id, "relu", [id, x](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      const TensorT<T>& xv = g.val(x);
      TensorT<T>& gx = g.ensure_grad(x);
      for (std::size_t i = 0; i < gr.size(); ++i) {
        if (xv.v[i] > T(0)) gx.v[i] += gr.v[i];
      }
    });
    return id;
  }

  Id sigmoid(Id x) {
    const TensorT<T>& xv = val(x);
    TensorT<T> out(xv.shape);
    for (std::size_t i = 0; i < xv.size(); ++i) out.v[i] = T(1) / (T(1) + std::exp(-xv.v[i]));
    Id id = push(std::move(out), needs_grad(x));
    record(id, "sigmoid", [id, x](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      const TensorT<T>& yv = g.val(id);
      TensorT<T>& gx = g.ensure_grad(x);
      for (std::size_t i = 0; i < gr.size(); ++i) {
        gx.v[i] += gr.v[i] * yv.v[i] * (T(1) - yv.v[i]);
      }
    });
    return id;
  }

  Id tanh_(Id x) {
    const TensorT<T>& xv = val(x);
    TensorT<T> out(xv.shape);
    for (std::size_t i = 0; i < xv.size(); ++i) out.v[i] = std::tanh(xv.v[i]);
    Id id = push(std::move(out), needs_grad(x));
    record(id, "tanh", [id, x](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      const TensorT<T>& yv = g.val(id);
      TensorT<T>& gx = g.ensure_grad(x);
      for (std::size_t i = 0; i < gr.size(); ++i) {
        gx.v[i] += gr.v[i] * (T(1) - yv.v[i] * yv.v[i]);
      }
    });
    return id;
  }

  Id add(Id a, Id b) {
    check_same("add", a, b);
    const TensorT<T>&av = val(a), &bv = val(b);
    TensorT<T> out(av.shape);
    for (std::size_t i = 0; i < av.size(); ++i) out.v[i] = av.v[i] + bv.v[i];
    Id id = push(std::move(out), needs_grad(a) || needs_grad(b));
    record(id, "add", [id, a, b](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      g.accum_if(a, gr);
      g.accum_if(b, gr);
    });
    return id;
  }

  Id sub(Id a, Id b) {
    check_same("sub", a, b);
    const TensorT<T>&av = val(a), &bv = val(b);
    TensorT<T> out(av.shape);
    for (std::size_t i = 0; i < av.size(); ++i) out.v[i] = av.v[i] - bv.v[i];
    Id id = push(std::move(out), needs_grad(a) || needs_grad(b));
    record(id, "sub", [id, a, b](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      g.accum_if(a, gr);
      if (g.needs_grad(b)) {
        TensorT<T>& gb = g.ensure_grad(b);
        for (std::size_t i = 0; i < gr.size(); ++i) gb.v[i] -= gr.v[i];
      }
    });
    return id;
  }

  Id mul(Id a, Id b) {
    check_same("mul", a, b);
    const TensorT<T>&av = val(a), &bv = val(b);
    TensorT<T> out(av.shape);
    for (std::size_t i = 0; i < av.size(); ++i) out.v[i] = av.v[i] * bv.v[i];
    Id id = push(std::move(out), needs_grad(a) || needs_grad(b));
    record(id, "mul", [id, a, b](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      if (g.needs_grad(a)) {
        const TensorT<T>& bv = g.val(b);
        TensorT<T>& ga = g.ensure_grad(a);
        for (std::size_t i = 0; i < gr.size(); ++i) ga.v[i] += gr.v[i] * bv.v[i];
      }
      if (g.needs_grad(b)) {
        const TensorT<T>& av = g.val(a);
        TensorT<T>& gb = g.ensure_grad(b);
        for (std::size_t i = 0; i < gr.size(); ++i) gb.v[i] += gr.v[i] * av.v[i];
      }
    });
    return id;
  }

  Id scale(Id x, double c) {
    const TensorT<T>& xv = val(x);
    TensorT<T> out(xv.shape);
    for (std::size_t i = 0; i < xv.size(); ++i) out.v[i] = xv.v[i] * static_cast<T>(c);
    Id id = push(std::move(out), needs_grad(x));
    record(id, "scale", [id, x, c](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      TensorT<T>& gx = g.ensure_grad(x);
      for (std::size_t i = 0; i < gr.size(); ++i) gx.v[i] += gr.v[i] * static_cast<T>(c);
    });
    return id;
  }

  // Fixed-order sum of same-shape tensors.
  Id add_all(const std::vector<Id>& xs) {
    if (xs.empty()) throw ShapeMismatch("add_all: empty operand list");
    for (Id x : xs) check_same("add_all", xs[0], x);
    TensorT<T> out = val(xs[0]);
    for (std::size_t k = 1; k < xs.size(); ++k) {
      const TensorT<T>& xv = val(xs[k]);
      for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += xv.v[i];
    }
    bool ng = false;
    for (Id x : xs) ng = ng || needs_grad(x);
    Id id = push(std::move(out), ng);
    std::vector<Id> ops = xs;
    record(id, "add_all", [id, ops](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      for (Id x : ops) g.accum_if(x, gr);
    });
    return id;
  }

  // ---- structure ----

  Id reshape(Id x, std::vector<int> shape) {
    const TensorT<T>& xv = val(x);
    if (TensorT<T>::count(shape) != xv.size()) {
      throw ShapeMismatch("reshape: " + shape_str(xv.shape) + " -> " + shape_str(shape));
    }
    TensorT<T> out(shape, xv.v);
    Id id = push(std::move(out), needs_grad(x));
    record(id, "reshape", [id, x](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      TensorT<T>& gx = g.ensure_grad(x);
      for (std::size_t i = 0; i < gr.size(); ++i) gx.v[i] += gr.v[i];
    });
    return id;
  }

  Id concat(const std::vector<Id>& xs, int axis) {
    if (xs.empty()) throw ShapeMismatch("concat: empty operand list");
    const auto& s0 = val(xs[0]).shape;
    int rank = static_cast<int>(s0.size());
    if (axis < 0 || axis >= rank) throw ShapeMismatch("concat: bad axis");
    std::vector<int> out_shape = s0;
    out_shape[axis] = 0;
    for (Id x : xs) {
      const auto& s = val(x).shape;
      if (static_cast<int>(s.size()) != rank) throw ShapeMismatch("concat: rank mismatch");
      for (int d = 0; d < rank; ++d) {
        if (d != axis && s[d] != s0[d]) {
          throw ShapeMismatch("concat: " + shape_str(s) + " vs " + shape_str(s0));
        }
      }
      out_shape[axis] += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(s0[d]);
    for (int d = axis + 1; d < rank; ++d) inner *= static_cast<std::size_t>(s0[d]);

    TensorT<T> out(out_shape);
    const std::size_t out_stride = static_cast<std::size_t>(out_shape[axis]) * inner;
    std::size_t off = 0;
    for (Id x : xs) {
      const TensorT<T>& xv = val(x);
      const std::size_t blk = static_cast<std::size_t>(xv.shape[axis]) * inner;
      for (std::size_t o = 0; o < outer; ++o) {
        std::memcpy(out.data() + o * out_stride + off, xv.data() + o * blk, blk * sizeof(T));
      }
      off += blk;
    }
    bool ng = false;
    std::vector<std::size_t> blks;
    for (Id x : xs) {
      ng = ng || needs_grad(x);
      blks.push_back(static_cast<std::size_t>(val(x).shape[axis]) * inner);
    }
    Id id = push(std::move(out), ng);
    std::vector<Id> ops = xs;
    record(id, "concat", [id, ops, blks, outer, out_stride](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      std::size_t off = 0;
      for (std::size_t k = 0; k < ops.size(); ++k) {
        if (g.needs_grad(ops[k])) {
          TensorT<T>& gx = g.ensure_grad(ops[k]);
          for (std::size_t o = 0; o < outer; ++o) {
            const T* src = gr.data() + o * out_stride + off;
            T* dst = gx.data() + o * blks[k];
            for (std::size_t i = 0; i < blks[k]; ++i) dst[i] += src[i];
          }
        }
        off += blks[k];
      }
    });
    return id;
  }

  // Columns [start, start+len) of a 2D tensor.
  Id slice_cols(Id x, int start, int len) {
    const TensorT<T>& xv = val(x);
    if (xv.rank() != 2 || start < 0 || start + len > xv.dim(1)) {
      throw ShapeMismatch("slice_cols: " + shape_str(xv.shape));
    }
    const int n = xv.dim(0), k = xv.dim(1);
    TensorT<T> out({n, len});
    for (int r = 0; r < n; ++r) {
      std::memcpy(out.data() + static_cast<std::size_t>(r) * len,
                  xv.data() + static_cast<std::size_t>(r) * k + start,
                  static_cast<std::size_t>(len) * sizeof(T));
    }
    Id id = push(std::move(out), needs_grad(x));
    record(id, "slice_cols", [id, x, start, len, n, k](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      TensorT<T>& gx = g.ensure_grad(x);
      for (int r = 0; r < n; ++r) {
        const T* src = gr.data() + static_cast<std::size_t>(r) * len;
        T* dst = gx.data() + static_cast<std::size_t>(r) * k + start;
        for (int i = 0; i < len; ++i) dst[i] += src[i];
      }
    });
    return id;
  }

  // Index t on axis 1 of {N,S,F} -> {N,F}.
  Id slice_mid(Id x, int t) {
    const TensorT<T>& xv = val(x);
    if (xv.rank() != 3 || t < 0 || t >= xv.dim(1)) {
      throw ShapeMismatch("slice_mid: " + shape_str(xv.shape));
    }
    const int n = xv.dim(0), s = xv.dim(1), f = xv.dim(2);
    TensorT<T> out({n, f});
    for (int r = 0; r < n; ++r) {
      std::memcpy(out.data() + static_cast<std::size_t>(r) * f,
                  xv.data() + (static_cast<std::size_t>(r) * s + t) * f,
                  static_cast<std::size_t>(f) * sizeof(T));
    }
    Id id = push(std::move(out), needs_grad(x));
    record(id, "slice_mid", [id, x, t, n, s, f](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      TensorT<T>& gx = g.ensure_grad(x);
      for (int r = 0; r < n; ++r) {
        const T* src = gr.data() + static_cast<std::size_t>(r) * f;
        T* dst = gx.data() + (static_cast<std::size_t>(r) * s + t) * f;
        for (int i = 0; i < f; ++i) dst[i] += src[i];
      }
    });
    return id;
  }

  // Spatial subsampling x[:, :, ::2, ::2]; the weight-free skip on reduce.
  Id subsample2(Id x) {
    const TensorT<T>& xv = val(x);
    if (xv.rank() != 4) throw ShapeMismatch("subsample2: " + shape_str(xv.shape));
    const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const int ho = (h + 1) / 2, wo = (w + 1) / 2;
    TensorT<T> out({n, c, ho, wo});
    std::size_t oi = 0;
    for (int s = 0; s < n * c; ++s) {
      const T* xp = xv.data() + static_cast<std::size_t>(s) * h * w;
      for (int i = 0; i < ho; ++i) {
        for (int j = 0; j < wo; ++j, ++oi) out.v[oi] = xp[2 * i * w + 2 * j];
      }
    }
    Id id = push(std::move(out), needs_grad(x));
    record(id, "subsample2", [id, x, n, c, h, w, ho, wo](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      TensorT<T>& gx = g.ensure_grad(x);
      std::size_t oi = 0;
      for (int s = 0; s < n * c; ++s) {
        T* gp = gx.data() + static_cast<std::size_t>(s) * h * w;
        for (int i = 0; i < ho; ++i) {
          for (int j = 0; j < wo; ++j, ++oi) gp[2 * i * w + 2 * j] += gr.v[oi];
        }
      }
    });
    return id;
  }

  // ---- dense / conv ----

  Id conv2d(Id x, Id w, std::optional<Id> b, kernels::ConvSpec cs) {
    const TensorT<T>&xv = val(x), &wv = val(w);
    if (xv.rank() != 4 || wv.rank() != 4) {
      throw ShapeMismatch("conv2d: x " + shape_str(xv.shape) + " w " + shape_str(wv.shape));
    }
    if (xv.dim(1) != wv.dim(1) * cs.groups || wv.dim(0) % cs.groups != 0) {
      throw ShapeMismatch("conv2d: channel mismatch x " + shape_str(xv.shape) + " w " +
                          shape_str(wv.shape) + " groups " + std::to_string(cs.groups));
    }
    TensorT<T> out;
    kernels::conv2d_forward(xv, wv, b ? &val(*b) : nullptr, cs, out);
    bool ng = needs_grad(x) || needs_grad(w) || (b && needs_grad(*b));
    Id id = push(std::move(out), ng);
    Id bid = b ? *b : Id(-1);
    record(id, "conv2d", [id, x, w, bid, cs](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      TensorT<T>* gx = g.needs_grad(x) ? &g.ensure_grad(x) : nullptr;
      TensorT<T>* gw = g.needs_grad(w) ? &g.ensure_grad(w) : nullptr;
      TensorT<T>* gb = (bid >= 0 && g.needs_grad(bid)) ? &g.ensure_grad(bid) : nullptr;
      kernels::conv2d_backward(g.val(x), g.val(w), cs, gr, gx, gw, gb);
    });
    return id;
  }

  Id linear(Id x, Id w, std::optional<Id> b) {
    const TensorT<T>&xv = val(x), &wv = val(w);
    if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1)) {
      throw ShapeMismatch("linear: x " + shape_str(xv.shape) + " w " + shape_str(wv.shape));
    }
    TensorT<T> out;
    kernels::linear_forward(xv, wv, b ? &val(*b) : nullptr, out);
    bool ng = needs_grad(x) || needs_grad(w) || (b && needs_grad(*b));
    Id id = push(std::move(out), ng);
    Id bid = b ? *b : Id(-1);
    record(id, "linear", [id, x, w, bid](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      TensorT<T>* gx = g.needs_grad(x) ? &g.ensure_grad(x) : nullptr;
      TensorT<T>* gw = g.needs_grad(w) ? &g.ensure_grad(w) : nullptr;
      TensorT<T>* gb = (bid >= 0 && g.needs_grad(bid)) ? &g.ensure_grad(bid) : nullptr;
      kernels::linear_backward(g.val(x), g.val(w), gr, gx, gw, gb);
    });
    return id;
  }

  Id maxpool3(Id x, int stride) {
    const TensorT<T>& xv = val(x);
    if (xv.rank() != 4) throw ShapeMismatch("maxpool3: " + shape_str(xv.shape));
    TensorT<T> out;
    auto argmax = std::make_shared<std::vector<int>>();
    kernels::maxpool3_forward(xv, stride, out, *argmax);
    const int h = xv.dim(2), w = xv.dim(3);
    Id id = push(std::move(out), needs_grad(x));
    record(id, "maxpool3", [id, x, argmax, h, w](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      TensorT<T>& gx = g.ensure_grad(x);
      kernels::maxpool3_backward(gr, *argmax, h, w, gx);
    });
    return id;
  }

  Id avgpool3(Id x, int stride) {
    const TensorT<T>& xv = val(x);
    if (xv.rank() != 4) throw ShapeMismatch("avgpool3: " + shape_str(xv.shape));
    TensorT<T> out;
    kernels::avgpool3_forward(xv, stride, out);
    const int h = xv.dim(2), w = xv.dim(3);
    Id id = push(std::move(out), needs_grad(x));
    record(id, "avgpool3", [id, x, stride, h, w](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      TensorT<T>& gx = g.ensure_grad(x);
      kernels::avgpool3_backward(gr, stride, h, w, gx);
    });
    return id;
  }

  // Batch statistics (training=true) or running statistics (training=false).
  // Running buffers update only when training && update_running.
  Id batchnorm(Id x, Id gamma, Id beta, ParamT<T>& run_mean, ParamT<T>& run_var, bool training,
               bool update_running, double momentum = 0.1, double eps = 1e-5) {
    const TensorT<T>& xv = val(x);
    if (xv.rank() < 2 || val(gamma).size() != static_cast<std::size_t>(xv.dim(1)) ||
        val(beta).size() != static_cast<std::size_t>(xv.dim(1))) {
      throw ShapeMismatch("batchnorm: x " + shape_str(xv.shape) + " gamma " +
                          shape_str(val(gamma).shape));
    }
    TensorT<T> out;
    bool ng = needs_grad(x) || needs_grad(gamma) || needs_grad(beta);
    if (training) {
      auto save_mean = std::make_shared<std::vector<T>>();
      auto save_invstd = std::make_shared<std::vector<T>>();
      kernels::bn_forward_train(xv, val(gamma), val(beta), static_cast<T>(eps), out, *save_mean,
                                *save_invstd, update_running ? &run_mean.value : nullptr,
                                update_running ? &run_var.value : nullptr,
                                static_cast<T>(momentum));
      Id id = push(std::move(out), ng);
      record(id, "batchnorm", [id, x, gamma, beta, save_mean, save_invstd](GraphT& g) {
        const TensorT<T>& gr = g.nodes_[id].grad;
        TensorT<T>* gx = g.needs_grad(x) ? &g.ensure_grad(x) : nullptr;
        TensorT<T>* gg = g.needs_grad(gamma) ? &g.ensure_grad(gamma) : nullptr;
        TensorT<T>* gb = g.needs_grad(beta) ? &g.ensure_grad(beta) : nullptr;
        kernels::bn_backward_train(g.val(x), g.val(gamma), *save_mean, *save_invstd, gr, gx, gg,
                                   gb);
      });
      return id;
    }
    kernels::bn_forward_eval(xv, val(gamma), val(beta), run_mean.value, run_var.value,
                             static_cast<T>(eps), out);
    Id id = push(std::move(out), ng);
    ParamT<T>* rm = &run_mean;
    ParamT<T>* rv = &run_var;
    record(id, "batchnorm", [id, x, gamma, beta, rm, rv, eps](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      TensorT<T>* gx = g.needs_grad(x) ? &g.ensure_grad(x) : nullptr;
      TensorT<T>* gg = g.needs_grad(gamma) ? &g.ensure_grad(gamma) : nullptr;
      TensorT<T>* gb = g.needs_grad(beta) ? &g.ensure_grad(beta) : nullptr;
      kernels::bn_backward_eval(g.val(gamma), g.val(x), rm->value, rv->value,
                                static_cast<T>(eps), gr, gx, gg, gb);
    });
    return id;
  }

  Id global_avg_pool(Id x) {
    const TensorT<T>& xv = val(x);
    if (xv.rank() != 4) throw ShapeMismatch("global_avg_pool: " + shape_str(xv.shape));
    const int n = xv.dim(0), c = xv.dim(1);
    const std::size_t hw = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    TensorT<T> out({n, c});
    for (int s = 0; s < n * c; ++s) {
      const T* xp = xv.data() + static_cast<std::size_t>(s) * hw;
      T sum = 0;
      for (std::size_t i = 0; i < hw; ++i) sum += xp[i];
      out.v[static_cast<std::size_t>(s)] = sum / static_cast<T>(hw);
    }
    Id id = push(std::move(out), needs_grad(x));
    record(id, "global_avg_pool", [id, x, n, c, hw](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      TensorT<T>& gx = g.ensure_grad(x);
      for (int s = 0; s < n * c; ++s) {
        const T share = gr.v[static_cast<std::size_t>(s)] / static_cast<T>(hw);
        T* gp = gx.data() + static_cast<std::size_t>(s) * hw;
        for (std::size_t i = 0; i < hw; ++i) gp[i] += share;
      }
    });
    return id;
  }

  Id softmax(Id x) {
    TensorT<T> out;
    kernels::softmax_forward(val(x), out);
    Id id = push(std::move(out), needs_grad(x));
    record(id, "softmax", [id, x](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      TensorT<T>& gx = g.ensure_grad(x);
      kernels::softmax_backward(g.val(id), gr, gx);
    });
    return id;
  }

  // q {N,K} and one column index per row -> {N}.
  Id select_col(Id x, std::vector<int> idx) {
    const TensorT<T>& xv = val(x);
    if (xv.rank() != 2 || idx.size() != static_cast<std::size_t>(xv.dim(0))) {
      throw ShapeMismatch("select_col: " + shape_str(xv.shape) + " with " +
                          std::to_string(idx.size()) + " indices");
    }
    const int n = xv.dim(0), k = xv.dim(1);
    TensorT<T> out({n});
    for (int r = 0; r < n; ++r) {
      if (idx[static_cast<std::size_t>(r)] < 0 || idx[static_cast<std::size_t>(r)] >= k) {
        throw ShapeMismatch("select_col: index out of range");
      }
      out.v[static_cast<std::size_t>(r)] =
          xv.v[static_cast<std::size_t>(r) * k + idx[static_cast<std::size_t>(r)]];
    }
    Id id = push(std::move(out), needs_grad(x));
    auto ix = std::make_shared<std::vector<int>>(std::move(idx));
    record(id, "select_col", [id, x, ix, n, k](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      TensorT<T>& gx = g.ensure_grad(x);
      for (int r = 0; r < n; ++r) {
        gx.v[static_cast<std::size_t>(r) * k + (*ix)[static_cast<std::size_t>(r)]] +=
            gr.v[static_cast<std::size_t>(r)];
      }
    });
    return id;
  }

  Id reduce_mean(Id x) {
    const TensorT<T>& xv = val(x);
    T sum = 0;
    for (T v : xv.v) sum += v;
    TensorT<T> out({1});
    out.v[0] = sum / static_cast<T>(xv.size());
    const std::size_t n = xv.size();
    Id id = push(std::move(out), needs_grad(x));
    record(id, "reduce_mean", [id, x, n](GraphT& g) {
      const T share = g.nodes_[id].grad.v[0] / static_cast<T>(n);
      TensorT<T>& gx = g.ensure_grad(x);
      for (std::size_t i = 0; i < n; ++i) gx.v[i] += share;
    });
    return id;
  }

  Id reduce_sum(Id x) {
    const TensorT<T>& xv = val(x);
    T sum = 0;
    for (T v : xv.v) sum += v;
    TensorT<T> out({1});
    out.v[0] = sum;
    const std::size_t n = xv.size();
    Id id = push(std::move(out), needs_grad(x));
    record(id, "reduce_sum", [id, x, n](GraphT& g) {
      const T gr = g.nodes_[id].grad.v[0];
      TensorT<T>& gx = g.ensure_grad(x);
      for (std::size_t i = 0; i < n; ++i) gx.v[i] += gr;
    });
    return id;
  }

  // Forward: one-hot at argmax((logits + noise) / tau). Backward: gradient of
  // softmax((logits + noise) / tau), the straight-through relaxation.
  Id gumbel_softmax_st(Id logits, double tau, const std::vector<T>& noise) {
    if (tau <= 0) throw InvalidTemperature("gumbel_softmax_st: tau must be positive");
    const TensorT<T>& lv = val(logits);
    if (lv.rank() != 1 || noise.size() != lv.size()) {
      throw ShapeMismatch("gumbel_softmax_st: logits " + shape_str(lv.shape) + " noise " +
                          std::to_string(noise.size()));
    }
    const int k = static_cast<int>(lv.size());
    TensorT<T> z({k});
    for (int i = 0; i < k; ++i) {
      z.v[static_cast<std::size_t>(i)] =
          (lv.v[static_cast<std::size_t>(i)] + noise[static_cast<std::size_t>(i)]) /
          static_cast<T>(tau);
    }
    auto soft = std::make_shared<TensorT<T>>();
    kernels::softmax_forward(z, *soft);
    int kstar = 0;
    for (int i = 1; i < k; ++i) {
      if (z.v[static_cast<std::size_t>(i)] > z.v[static_cast<std::size_t>(kstar)]) kstar = i;
    }
    TensorT<T> out({k});
    out.v[static_cast<std::size_t>(kstar)] = T(1);
    Id id = push(std::move(out), needs_grad(logits));
    record(id, "gumbel_softmax_st", [id, logits, soft, tau](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      TensorT<T> gz(soft->shape);
      kernels::softmax_backward(*soft, gr, gz);
      TensorT<T>& gl = g.ensure_grad(logits);
      for (std::size_t i = 0; i < gz.size(); ++i) gl.v[i] += gz.v[i] / static_cast<T>(tau);
    });
    return id;
  }

  // Edge mixer for sampled-subgraph training. Hard mode emits op_out
  // unchanged (so one-hot weights reproduce a discrete network exactly);
  // soft mode emits st[k*] * op_out + sum of the other st entries, which is
  // the function the recorded backward differentiates in both modes.
  Id gdas_edge(Id op_out, Id st, int k_star, bool soft) {
    const TensorT<T>&ov = val(op_out), &sv = val(st);
    if (sv.rank() != 1 || k_star < 0 || k_star >= static_cast<int>(sv.size())) {
      throw ShapeMismatch("gdas_edge: st " + shape_str(sv.shape) + " k*=" +
                          std::to_string(k_star));
    }
    TensorT<T> out(ov.shape);
    if (soft) {
      T rest = 0;
      for (std::size_t i = 0; i < sv.size(); ++i) {
        if (static_cast<int>(i) != k_star) rest += sv.v[i];
      }
      const T w = sv.v[static_cast<std::size_t>(k_star)];
      for (std::size_t i = 0; i < ov.size(); ++i) out.v[i] = w * ov.v[i] + rest;
    } else {
      out.v = ov.v;
    }
    Id id = push(std::move(out), needs_grad(op_out) || needs_grad(st));
    record(id, "gdas_edge", [id, op_out, st, k_star, soft](GraphT& g) {
      const TensorT<T>& gr = g.nodes_[id].grad;
      if (g.needs_grad(st)) {
        const TensorT<T>& ov = g.val(op_out);
        T dot = 0, total = 0;
        for (std::size_t i = 0; i < gr.size(); ++i) {
          dot += gr.v[i] * ov.v[i];
          total += gr.v[i];
        }
        TensorT<T>& gs = g.ensure_grad(st);
        for (std::size_t i = 0; i < gs.size(); ++i) {
          gs.v[i] += static_cast<int>(i) == k_star ? dot : total;
        }
      }
      if (g.needs_grad(op_out)) {
        TensorT<T>& go = g.ensure_grad(op_out);
        if (soft) {
          const T w = g.val(st).v[static_cast<std::size_t>(k_star)];
          for (std::size_t i = 0; i < gr.size(); ++i) go.v[i] += w * gr.v[i];
        } else {
          for (std::size_t i = 0; i < gr.size(); ++i) go.v[i] += gr.v[i];
        }
      }
    });
    return id;
  }

  TensorT<T>& ensure_grad(Id id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = TensorT<T>(val(id).shape);
    return n.grad;
  }

 private:
  struct Node {
    TensorT<T> val;
    const TensorT<T>* ref = nullptr;  // set for param leaves; val stays empty
    TensorT<T> grad;
    std::function<void(GraphT&)> back;
    bool needs_grad = false;
    bool poisoned = false;
  };

  Id push(TensorT<T> v, bool needs) {
    Node n;
    n.val = std::move(v);
    n.needs_grad = recording_ && needs;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  Id push_ref(const TensorT<T>& v, bool needs) {
    Node n;
    n.ref = &v;
    n.needs_grad = recording_ && needs;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  template <class F>
  void record(Id id, const char* name, F&& fn) {
    if (!nodes_[id].needs_grad) return;
    nodes_[id].back = std::forward<F>(fn);
    const std::string& target = break_backward_target();
    if (!target.empty() && target == name) nodes_[id].poisoned = true;
  }

  void check_same(const char* op, Id a, Id b) const {
    if (val(a).shape != val(b).shape) {
      throw ShapeMismatch(std::string(op) + ": " + shape_str(val(a).shape) + " vs " +
                          shape_str(val(b).shape));
    }
  }

  void accum_if(Id id, const TensorT<T>& g) {
    if (!needs_grad(id)) return;
    TensorT<T>& gx = ensure_grad(id);
    for (std::size_t i = 0; i < g.size(); ++i) gx.v[i] += g.v[i];
  }

  std::vector<Node> nodes_;
  bool recording_;
};

// One LSTM step from primitives: gates = x W_ih^T + b_ih + h W_hh^T + b_hh,
// gate order (i, f, g, o); returns (h', c').
template <class T>
std::pair<typename GraphT<T>::Id, typename GraphT<T>::Id> lstm_cell(
    GraphT<T>& g, typename GraphT<T>::Id x, typename GraphT<T>::Id h, typename GraphT<T>::Id c,
    typename GraphT<T>::Id w_ih, typename GraphT<T>::Id w_hh, typename GraphT<T>::Id b_ih,
    typename GraphT<T>::Id b_hh, int hidden) {
  auto gates = g.add(g.linear(x, w_ih, b_ih), g.linear(h, w_hh, b_hh));
  auto i_g = g.sigmoid(g.slice_cols(gates, 0, hidden));
  auto f_g = g.sigmoid(g.slice_cols(gates, hidden, hidden));
  auto g_g = g.tanh_(g.slice_cols(gates, 2 * hidden, hidden));
  auto o_g = g.sigmoid(g.slice_cols(gates, 3 * hidden, hidden));
  auto c_new = g.add(g.mul(f_g, c), g.mul(i_g, g_g));
  auto h_new = g.mul(o_g, g.tanh_(c_new));
  return {h_new, c_new};
}

using Graph = GraphT<float>;
using GraphF = GraphT<float>;
using GraphD = GraphT<double>;

}  // namespace planeloc::nn
