#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <vector>

#include "planeloc/nn/tensor.hpp"

// Raw forward/backward compute routines shared by the autodiff graph.
// All of them are single-threaded and reduce in a fixed order, so results
// are reproducible bit-for-bit on a given machine.
namespace planeloc::nn::kernels {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvSpec {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
  int groups = 1;
};

inline int conv_out_extent(int in, int k, int stride, int pad, int dilation) {
  return (in + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
}

// col layout: [(C/g)*kh*kw, N*Ho*Wo] for one group, rows (c,ki,kj) in that
// nesting, columns (n,ho,wo).
template <class T>
void im2col_group(const T* x, int n_batch, int c_total, int h, int w, int c0, int c_per_group,
                  int kh, int kw, const ConvSpec& cs, int ho, int wo, T* col) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t sample = static_cast<std::size_t>(c_total) * plane;
  const std::size_t out_cols = static_cast<std::size_t>(n_batch) * ho * wo;
  std::size_t row = 0;
  for (int c = 0; c < c_per_group; ++c) {
    const T* xc_base = x + static_cast<std::size_t>(c0 + c) * plane;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj, ++row) {
        T* dst = col + row * out_cols;
        for (int n = 0; n < n_batch; ++n) {
          const T* xc = xc_base + static_cast<std::size_t>(n) * sample;
          for (int i = 0; i < ho; ++i) {
            int yi = i * cs.stride - cs.pad + ki * cs.dilation;
            if (yi < 0 || yi >= h) {
              std::memset(dst, 0, sizeof(T) * static_cast<std::size_t>(wo));
              dst += wo;
              continue;
            }
            const T* xrow = xc + static_cast<std::size_t>(yi) * w;
            for (int j = 0; j < wo; ++j) {
              int xj = j * cs.stride - cs.pad + kj * cs.dilation;
              *dst++ = (xj >= 0 && xj < w) ? xrow[xj] : T(0);
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im_group(const T* col, int n_batch, int c_total, int h, int w, int c0, int c_per_group,
                  int kh, int kw, const ConvSpec& cs, int ho, int wo, T* gx) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t sample = static_cast<std::size_t>(c_total) * plane;
  const std::size_t out_cols = static_cast<std::size_t>(n_batch) * ho * wo;
  std::size_t row = 0;
  for (int c = 0; c < c_per_group; ++c) {
    T* gc_base = gx + static_cast<std::size_t>(c0 + c) * plane;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj, ++row) {
        const T* src = col + row * out_cols;
        for (int n = 0; n < n_batch; ++n) {
          T* gc = gc_base + static_cast<std::size_t>(n) * sample;
          for (int i = 0; i < ho; ++i) {
            int yi = i * cs.stride - cs.pad + ki * cs.dilation;
            if (yi < 0 || yi >= h) {
              src += wo;
              continue;
            }
            T* grow = gc + static_cast<std::size_t>(yi) * w;
            for (int j = 0; j < wo; ++j) {
              int xj = j * cs.stride - cs.pad + kj * cs.dilation;
              if (xj >= 0 && xj < w) grow[xj] += src[j];
            }
            src += wo;
          }
        }
      }
    }
  }
}

// x {N,Cin,H,W}, w {Cout,Cin/g,kh,kw}, b {Cout} optional -> out {N,Cout,Ho,Wo}
template <class T>
void conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* b,
                    const ConvSpec& cs, TensorT<T>& out) {
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int ho = conv_out_extent(h, kh, cs.stride, cs.pad, cs.dilation);
  const int wo = conv_out_extent(wd, kw, cs.stride, cs.pad, cs.dilation);
  const int cpg = cin / cs.groups, opg = cout / cs.groups;
  out = TensorT<T>({n, cout, ho, wo});

  const std::size_t cols = static_cast<std::size_t>(n) * ho * wo;
  const std::size_t rows = static_cast<std::size_t>(cpg) * kh * kw;
  std::vector<T> col(rows * cols);
  std::vector<T> gemm_out(static_cast<std::size_t>(opg) * cols);
  const std::size_t hw = static_cast<std::size_t>(ho) * wo;

  for (int g = 0; g < cs.groups; ++g) {
    im2col_group(x.data(), n, cin, h, wd, g * cpg, cpg, kh, kw, cs, ho, wo, col.data());
    Eigen::Map<const Mat<T>> W(w.data() + static_cast<std::size_t>(g) * opg * rows,
                               opg, static_cast<Eigen::Index>(rows));
    Eigen::Map<const Mat<T>> C(col.data(), static_cast<Eigen::Index>(rows),
                               static_cast<Eigen::Index>(cols));
    Eigen::Map<Mat<T>> O(gemm_out.data(), opg, static_cast<Eigen::Index>(cols));
    O.noalias() = W * C;
    for (int oc = 0; oc < opg; ++oc) {
      const T* src = gemm_out.data() + static_cast<std::size_t>(oc) * cols;
      const T bias = b ? b->v[static_cast<std::size_t>(g * opg + oc)] : T(0);
      for (int s = 0; s < n; ++s) {
        T* dst = out.data() + (static_cast<std::size_t>(s) * cout + g * opg + oc) * hw;
        const T* seg = src + static_cast<std::size_t>(s) * hw;
        if (b) {
          for (std::size_t i = 0; i < hw; ++i) dst[i] = seg[i] + bias;
        } else {
          std::memcpy(dst, seg, hw * sizeof(T));
        }
      }
    }
  }
}

// Gradients; any of gx/gw/gb may be null. gx/gw/gb are accumulated into.
template <class T>
void conv2d_backward(const TensorT<T>& x, const TensorT<T>& w, const ConvSpec& cs,
                     const TensorT<T>& gout, TensorT<T>* gx, TensorT<T>* gw, TensorT<T>* gb) {
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int ho = gout.dim(2), wo = gout.dim(3);
  const int cpg = cin / cs.groups, opg = cout / cs.groups;
  const std::size_t cols = static_cast<std::size_t>(n) * ho * wo;
  const std::size_t rows = static_cast<std::size_t>(cpg) * kh * kw;
  const std::size_t hw = static_cast<std::size_t>(ho) * wo;

  if (gb) {
    for (int oc = 0; oc < cout; ++oc) {
      T s = 0;
      for (int sm = 0; sm < n; ++sm) {
        const T* g = gout.data() + (static_cast<std::size_t>(sm) * cout + oc) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += g[i];
      }
      gb->v[static_cast<std::size_t>(oc)] += s;
    }
  }
  if (!gx && !gw) return;

  std::vector<T> gy_g(static_cast<std::size_t>(opg) * cols);
  std::vector<T> col(rows * cols);

  for (int g = 0; g < cs.groups; ++g) {
    for (int oc = 0; oc < opg; ++oc) {
      T* dst = gy_g.data() + static_cast<std::size_t>(oc) * cols;
      for (int sm = 0; sm < n; ++sm) {
        const T* src = gout.data() + (static_cast<std::size_t>(sm) * cout + g * opg + oc) * hw;
        std::memcpy(dst + static_cast<std::size_t>(sm) * hw, src, hw * sizeof(T));
      }
    }
    Eigen::Map<const Mat<T>> GY(gy_g.data(), opg, static_cast<Eigen::Index>(cols));
    if (gw) {
      im2col_group(x.data(), n, cin, h, wd, g * cpg, cpg, kh, kw, cs, ho, wo, col.data());
      Eigen::Map<const Mat<T>> C(col.data(), static_cast<Eigen::Index>(rows),
                                 static_cast<Eigen::Index>(cols));
      Eigen::Map<Mat<T>> GW(gw->data() + static_cast<std::size_t>(g) * opg * rows,
                            opg, static_cast<Eigen::Index>(rows));
      GW.noalias() += GY * C.transpose();
    }
    if (gx) {
      Eigen::Map<const Mat<T>> W(w.data() + static_cast<std::size_t>(g) * opg * rows,
                                 opg, static_cast<Eigen::Index>(rows));
      Eigen::Map<Mat<T>> GC(col.data(), static_cast<Eigen::Index>(rows),
                            static_cast<Eigen::Index>(cols));
      GC.noalias() = W.transpose() * GY;
      col2im_group(col.data(), n, cin, h, wd, g * cpg, cpg, kh, kw, cs, ho, wo, gx->data());
    }
  }
}

// x {N,I}, w {O,I}, b {O} optional -> out {N,O}
template <class T>
void linear_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* b,
                    TensorT<T>& out) {
  const int n = x.dim(0), in = x.dim(1), o = w.dim(0);
  out = TensorT<T>({n, o});
  Eigen::Map<const Mat<T>> X(x.data(), n, in);
  Eigen::Map<const Mat<T>> W(w.data(), o, in);
  Eigen::Map<Mat<T>> O(out.data(), n, o);
  O.noalias() = X * W.transpose();
  if (b) {
    for (int s = 0; s < n; ++s) {
      T* row = out.data() + static_cast<std::size_t>(s) * o;
      for (int j = 0; j < o; ++j) row[j] += b->v[static_cast<std::size_t>(j)];
    }
  }
}

template <class T>
void linear_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& gout,
                     TensorT<T>* gx, TensorT<T>* gw, TensorT<T>* gb) {
  const int n = x.dim(0), in = x.dim(1), o = w.dim(0);
  Eigen::Map<const Mat<T>> X(x.data(), n, in);
  Eigen::Map<const Mat<T>> W(w.data(), o, in);
  Eigen::Map<const Mat<T>> GY(gout.data(), n, o);
  if (gx) {
    Eigen::Map<Mat<T>> GX(gx->data(), n, in);
    GX.noalias() += GY * W;
  }
  if (gw) {
    Eigen::Map<Mat<T>> GW(gw->data(), o, in);
    GW.noalias() += GY.transpose() * X;
  }
  if (gb) {
    for (int s = 0; s < n; ++s) {
      const T* row = gout.data() + static_cast<std::size_t>(s) * o;
      for (int j = 0; j < o; ++j) gb->v[static_cast<std::size_t>(j)] += row[j];
    }
  }
}

// 3x3 window, pad 1. Argmax indices recorded for the backward scatter.
template <class T>
void maxpool3_forward(const TensorT<T>& x, int stride, TensorT<T>& out,
                      std::vector<int>& argmax) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = conv_out_extent(h, 3, stride, 1, 1), wo = conv_out_extent(w, 3, stride, 1, 1);
  out = TensorT<T>({n, c, ho, wo});
  argmax.resize(out.size());
  std::size_t oi = 0;
  for (int s = 0; s < n; ++s) {
    for (int ch = 0; ch < c; ++ch) {
      const T* xc = x.data() + (static_cast<std::size_t>(s) * c + ch) * h * w;
      for (int i = 0; i < ho; ++i) {
        for (int j = 0; j < wo; ++j, ++oi) {
          T best = T(0);
          int besti = -1;
          for (int ki = 0; ki < 3; ++ki) {
            int yi = i * stride - 1 + ki;
            if (yi < 0 || yi >= h) continue;
            for (int kj = 0; kj < 3; ++kj) {
              int xj = j * stride - 1 + kj;
              if (xj < 0 || xj >= w) continue;
              T v = xc[yi * w + xj];
              if (besti < 0 || v > best) {
                best = v;
                besti = yi * w + xj;
              }
            }
          }
          out.v[oi] = best;
          argmax[oi] = besti;
        }
      }
    }
  }
}

template <class T>
void maxpool3_backward(const TensorT<T>& gout, const std::vector<int>& argmax, int h, int w,
                       TensorT<T>& gx) {
  const int n = gout.dim(0), c = gout.dim(1);
  const std::size_t hw_out = static_cast<std::size_t>(gout.dim(2)) * gout.dim(3);
  std::size_t oi = 0;
  for (int s = 0; s < n; ++s) {
    for (int ch = 0; ch < c; ++ch) {
      T* gc = gx.data() + (static_cast<std::size_t>(s) * c + ch) * h * w;
      for (std::size_t k = 0; k < hw_out; ++k, ++oi) {
        if (argmax[oi] >= 0) gc[argmax[oi]] += gout.v[oi];
      }
    }
  }
}

// 3x3 window, pad 1, padding excluded from the divisor.
template <class T>
void avgpool3_forward(const TensorT<T>& x, int stride, TensorT<T>& out) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = conv_out_extent(h, 3, stride, 1, 1), wo = conv_out_extent(w, 3, stride, 1, 1);
  out = TensorT<T>({n, c, ho, wo});
  std::size_t oi = 0;
  for (int s = 0; s < n; ++s) {
    for (int ch = 0; ch < c; ++ch) {
      const T* xc = x.data() + (static_cast<std::size_t>(s) * c + ch) * h * w;
      for (int i = 0; i < ho; ++i) {
        for (int j = 0; j < wo; ++j, ++oi) {
          T sum = 0;
          int cnt = 0;
          for (int ki = 0; ki < 3; ++ki) {
            int yi = i * stride - 1 + ki;
            if (yi < 0 || yi >= h) continue;
            for (int kj = 0; kj < 3; ++kj) {
              int xj = j * stride - 1 + kj;
              if (xj < 0 || xj >= w) continue;
              sum += xc[yi * w + xj];
              ++cnt;
            }
          }
          out.v[oi] = sum / static_cast<T>(cnt);
        }
      }
    }
  }
}

template <class T>
void avgpool3_backward(const TensorT<T>& gout, int stride, int h, int w, TensorT<T>& gx) {
  const int n = gout.dim(0), c = gout.dim(1), ho = gout.dim(2), wo = gout.dim(3);
  std::size_t oi = 0;
  for (int s = 0; s < n; ++s) {
    for (int ch = 0; ch < c; ++ch) {
      T* gc = gx.data() + (static_cast<std::size_t>(s) * c + ch) * h * w;
      for (int i = 0; i < ho; ++i) {
        for (int j = 0; j < wo; ++j, ++oi) {
          int cnt = 0;
          for (int ki = 0; ki < 3; ++ki) {
            int yi = i * stride - 1 + ki;
            if (yi < 0 || yi >= h) continue;
            for (int kj = 0; kj < 3; ++kj) {
              int xj = j * stride - 1 + kj;
              if (xj >= 0 && xj < w) ++cnt;
            }
          }
          T share = gout.v[oi] / static_cast<T>(cnt);
          for (int ki = 0; ki < 3; ++ki) {
            int yi = i * stride - 1 + ki;
            if (yi < 0 || yi >= h) continue;
            for (int kj = 0; kj < 3; ++kj) {
              int xj = j * stride - 1 + kj;
              if (xj >= 0 && xj < w) gc[yi * w + xj] += share;
            }
          }
        }
      }
    }
  }
}

// Batch norm over channel axis 1; x is {N,C,...}. Training mode normalizes
// with biased batch variance and optionally folds unbiased stats into the
// running buffers (PyTorch convention).
template <class T>
void bn_forward_train(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps, TensorT<T>& out, std::vector<T>& save_mean,
                      std::vector<T>& save_invstd, TensorT<T>* run_mean, TensorT<T>* run_var,
                      T momentum) {
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t sp = x.size() / (static_cast<std::size_t>(n) * c);
  const std::size_t m = static_cast<std::size_t>(n) * sp;
  out = TensorT<T>(x.shape);
  save_mean.assign(static_cast<std::size_t>(c), T(0));
  save_invstd.assign(static_cast<std::size_t>(c), T(0));
  for (int ch = 0; ch < c; ++ch) {
    T mean = 0;
    for (int s = 0; s < n; ++s) {
      const T* xc = x.data() + (static_cast<std::size_t>(s) * c + ch) * sp;
      for (std::size_t i = 0; i < sp; ++i) mean += xc[i];
    }
    mean /= static_cast<T>(m);
    T var = 0;
    for (int s = 0; s < n; ++s) {
      const T* xc = x.data() + (static_cast<std::size_t>(s) * c + ch) * sp;
      for (std::size_t i = 0; i < sp; ++i) {
        T d = xc[i] - mean;
        var += d * d;
      }
    }
    var /= static_cast<T>(m);
    T invstd = T(1) / std::sqrt(var + eps);
    save_mean[static_cast<std::size_t>(ch)] = mean;
    save_invstd[static_cast<std::size_t>(ch)] = invstd;
    const T g = gamma.v[static_cast<std::size_t>(ch)], b = beta.v[static_cast<std::size_t>(ch)];
    for (int s = 0; s < n; ++s) {
      const T* xc = x.data() + (static_cast<std::size_t>(s) * c + ch) * sp;
      T* oc = out.data() + (static_cast<std::size_t>(s) * c + ch) * sp;
      for (std::size_t i = 0; i < sp; ++i) oc[i] = (xc[i] - mean) * invstd * g + b;
    }
    if (run_mean) {
      T unbiased = m > 1 ? var * static_cast<T>(m) / static_cast<T>(m - 1) : var;
      run_mean->v[static_cast<std::size_t>(ch)] =
          (T(1) - momentum) * run_mean->v[static_cast<std::size_t>(ch)] + momentum * mean;
      run_var->v[static_cast<std::size_t>(ch)] =
          (T(1) - momentum) * run_var->v[static_cast<std::size_t>(ch)] + momentum * unbiased;
    }
  }
}

template <class T>
void bn_forward_eval(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                     const TensorT<T>& run_mean, const TensorT<T>& run_var, T eps,
                     TensorT<T>& out) {
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t sp = x.size() / (static_cast<std::size_t>(n) * c);
  out = TensorT<T>(x.shape);
  for (int ch = 0; ch < c; ++ch) {
    const T invstd = T(1) / std::sqrt(run_var.v[static_cast<std::size_t>(ch)] + eps);
    const T scale = gamma.v[static_cast<std::size_t>(ch)] * invstd;
    const T shift = beta.v[static_cast<std::size_t>(ch)] -
                    run_mean.v[static_cast<std::size_t>(ch)] * scale;
    for (int s = 0; s < n; ++s) {
      const T* xc = x.data() + (static_cast<std::size_t>(s) * c + ch) * sp;
      T* oc = out.data() + (static_cast<std::size_t>(s) * c + ch) * sp;
      for (std::size_t i = 0; i < sp; ++i) oc[i] = xc[i] * scale + shift;
    }
  }
}

template <class T>
void bn_backward_train(const TensorT<T>& x, const TensorT<T>& gamma,
                       const std::vector<T>& save_mean, const std::vector<T>& save_invstd,
                       const TensorT<T>& gout, TensorT<T>* gx, TensorT<T>* ggamma,
                       TensorT<T>* gbeta) {
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t sp = x.size() / (static_cast<std::size_t>(n) * c);
  const T m = static_cast<T>(static_cast<std::size_t>(n) * sp);
  for (int ch = 0; ch < c; ++ch) {
    const T mean = save_mean[static_cast<std::size_t>(ch)];
    const T invstd = save_invstd[static_cast<std::size_t>(ch)];
    T sum_g = 0, sum_gx = 0;
    for (int s = 0; s < n; ++s) {
      const std::size_t base = (static_cast<std::size_t>(s) * c + ch) * sp;
      for (std::size_t i = 0; i < sp; ++i) {
        const T g = gout.v[base + i];
        sum_g += g;
        sum_gx += g * (x.v[base + i] - mean) * invstd;
      }
    }
    if (gbeta) gbeta->v[static_cast<std::size_t>(ch)] += sum_g;
    if (ggamma) ggamma->v[static_cast<std::size_t>(ch)] += sum_gx;
    if (gx) {
      const T gsc = gamma.v[static_cast<std::size_t>(ch)] * invstd;
      for (int s = 0; s < n; ++s) {
        const std::size_t base = (static_cast<std::size_t>(s) * c + ch) * sp;
        for (std::size_t i = 0; i < sp; ++i) {
          const T xhat = (x.v[base + i] - mean) * invstd;
          gx->v[base + i] += gsc * (gout.v[base + i] - (sum_g + xhat * sum_gx) / m);
        }
      }
    }
  }
}

template <class T>
void bn_backward_eval(const TensorT<T>& gamma, const TensorT<T>& x, const TensorT<T>& run_mean,
                      const TensorT<T>& run_var, T eps, const TensorT<T>& gout, TensorT<T>* gx,
                      TensorT<T>* ggamma, TensorT<T>* gbeta) {
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t sp = x.size() / (static_cast<std::size_t>(n) * c);
  for (int ch = 0; ch < c; ++ch) {
    const T invstd = T(1) / std::sqrt(run_var.v[static_cast<std::size_t>(ch)] + eps);
    const T mean = run_mean.v[static_cast<std::size_t>(ch)];
    T sum_g = 0, sum_gx = 0;
    for (int s = 0; s < n; ++s) {
      const std::size_t base = (static_cast<std::size_t>(s) * c + ch) * sp;
      for (std::size_t i = 0; i < sp; ++i) {
        const T g = gout.v[base + i];
        sum_g += g;
        sum_gx += g * (x.v[base + i] - mean) * invstd;
        if (gx) gx->v[base + i] += g * gamma.v[static_cast<std::size_t>(ch)] * invstd;
      }
    }
    if (gbeta) gbeta->v[static_cast<std::size_t>(ch)] += sum_g;
    if (ggamma) ggamma->v[static_cast<std::size_t>(ch)] += sum_gx;
  }
}

// Softmax over the last axis of a 2D tensor {N,K} (or treat 1D as {1,K}).
template <class T>
void softmax_forward(const TensorT<T>& x, TensorT<T>& out) {
  const int k = x.dim(x.rank() - 1);
  const std::size_t rows = x.size() / static_cast<std::size_t>(k);
  out = TensorT<T>(x.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * k;
    T* yr = out.data() + r * k;
    T mx = xr[0];
    for (int i = 1; i < k; ++i) mx = std::max(mx, xr[i]);
    T sum = 0;
    for (int i = 0; i < k; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      sum += yr[i];
    }
    for (int i = 0; i < k; ++i) yr[i] /= sum;
  }
}

template <class T>
void softmax_backward(const TensorT<T>& y, const TensorT<T>& gout, TensorT<T>& gx) {
  const int k = y.dim(y.rank() - 1);
  const std::size_t rows = y.size() / static_cast<std::size_t>(k);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* yr = y.data() + r * k;
    const T* gr = gout.data() + r * k;
    T* gxr = gx.data() + r * k;
    T dotv = 0;
    for (int i = 0; i < k; ++i) dotv += yr[i] * gr[i];
    for (int i = 0; i < k; ++i) gxr[i] += yr[i] * (gr[i] - dotv);
  }
}

}  // namespace planeloc::nn::kernels
