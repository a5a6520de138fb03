#pragma once

#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "planeloc/nn/tensor.hpp"
#include "planeloc/rng.hpp"

namespace planeloc::nn {

// Named tensor owned by a ParamStore. Buffers (running stats) are saved in
// checkpoints but never optimized.
template <class T>
struct ParamT {
  std::string name;
  TensorT<T> value;
  TensorT<T> grad;
  bool trainable = true;
  bool grad_touched = false;
};

template <class T>
class ParamStoreT {
 public:
  ParamT<T>& create(const std::string& name, std::vector<int> shape, bool trainable = true) {
    if (index_.count(name)) throw InvalidConfig("duplicate parameter name: " + name);
    auto p = std::make_unique<ParamT<T>>();
    p->name = name;
    p->value = TensorT<T>(shape);
    p->grad = TensorT<T>(std::move(shape));
    p->trainable = trainable;
    index_[name] = items_.size();
    items_.push_back(std::move(p));
    return *items_.back();
  }

  ParamT<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : items_[it->second].get();
  }
  const ParamT<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : items_[it->second].get();
  }

  const std::vector<std::unique_ptr<ParamT<T>>>& items() const { return items_; }

  std::size_t trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& p : items_) {
      if (p->trainable) n += p->value.size();
    }
    return n;
  }

  void clear_touched() {
    for (auto& p : items_) {
      if (p->grad_touched) {
        std::memset(p->grad.data(), 0, p->grad.size() * sizeof(T));
        p->grad_touched = false;
      }
    }
  }

  // Target-network sync: copies values by name; shapes must already match.
  void copy_values_from(const ParamStoreT& src) {
    for (auto& p : items_) {
      const ParamT<T>* q = src.find(p->name);
      if (!q || q->value.shape != p->value.shape) {
        throw NameOrShapeMismatch("copy_values_from: no matching source for " + p->name);
      }
      p->value.v = q->value.v;
    }
  }

 private:
  std::vector<std::unique_ptr<ParamT<T>>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <class T>
void fill_normal(TensorT<T>& t, Rng& rng, double stddev) {
  for (auto& x : t.v) x = static_cast<T>(rng.normal() * stddev);
}

template <class T>
void kaiming_init(TensorT<T>& t, Rng& rng, std::size_t fan_in) {
  fill_normal(t, rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

template <class T>
void fill_constant(TensorT<T>& t, T c) {
  for (auto& x : t.v) x = c;
}

// Bias-corrected adaptive-moment update for a single tensor; t >= 1.
template <class T>
void adam_step(TensorT<T>& param, const TensorT<T>& grad, TensorT<T>& m, TensorT<T>& v,
               double lr, double beta1, double beta2, double eps, std::int64_t t) {
  if (param.shape != grad.shape || param.shape != m.shape || param.shape != v.shape) {
    throw ShapeMismatch("adam_step: param " + shape_str(param.shape) + " vs grad " +
                        shape_str(grad.shape));
  }
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(grad.v[i]);
    const double mi = beta1 * static_cast<double>(m.v[i]) + (1.0 - beta1) * g;
    const double vi = beta2 * static_cast<double>(v.v[i]) + (1.0 - beta2) * g * g;
    m.v[i] = static_cast<T>(mi);
    v.v[i] = static_cast<T>(vi);
    param.v[i] -= static_cast<T>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
  }
}

// Lazily materialized per-parameter moments; only parameters whose gradient
// was touched this iteration move, each with its own bias-correction clock
// (sparse-Adam convention). Iteration order follows store creation order.
template <class T>
class AdamT {
 public:
  explicit AdamT(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step(ParamStoreT<T>& store) {
    for (const auto& p : store.items()) {
      if (!p->trainable || !p->grad_touched) continue;
      State& st = states_[p->name];
      if (st.m.size() == 0) {
        st.m = TensorT<T>(p->value.shape);
        st.v = TensorT<T>(p->value.shape);
      }
      ++st.t;
      adam_step(p->value, p->grad, st.m, st.v, lr_, beta1_, beta2_, eps_, st.t);
    }
    store.clear_touched();
  }

 private:
  struct State {
    TensorT<T> m, v;
    std::int64_t t = 0;
  };
  double lr_, beta1_, beta2_, eps_;
  std::unordered_map<std::string, State> states_;
};

// Checkpoint: magic CKPT, u16 version, u32 count, then per parameter
// (u32 name length, name bytes, u32 rank, u32 dims..., f32 data).
template <class T>
void save_checkpoint(const ParamStoreT<T>& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write("CKPT", 4);
  std::uint16_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 2);
  std::uint32_t count = static_cast<std::uint32_t>(store.items().size());
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& p : store.items()) {
    std::uint32_t nl = static_cast<std::uint32_t>(p->name.size());
    out.write(reinterpret_cast<const char*>(&nl), 4);
    out.write(p->name.data(), nl);
    std::uint32_t rank = static_cast<std::uint32_t>(p->value.rank());
    out.write(reinterpret_cast<const char*>(&rank), 4);
    for (int d : p->value.shape) {
      std::uint32_t u = static_cast<std::uint32_t>(d);
      out.write(reinterpret_cast<const char*>(&u), 4);
    }
    for (T x : p->value.v) {
      float f = static_cast<float>(x);
      out.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  if (!out) throw IoError("short write to checkpoint: " + path);
}

// Loads records whose name starts with `prefix` into matching parameters.
// Throws NameOrShapeMismatch listing every offender: records without a
// matching parameter, shape conflicts, and parameters under the prefix that
// the file lacks.  allow_extra tolerates file records the model lacks, for
// loading a subset model from a superset checkpoint.
template <class T>
void load_checkpoint(ParamStoreT<T>& store, const std::string& path,
                     const std::string& prefix = "", bool allow_extra = false) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "CKPT", 4) != 0) {
    throw FormatError("checkpoint " + path + ": bad magic");
  }
  std::uint16_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 2);
  if (version != 1) {
    throw VersionError("checkpoint " + path + ": unsupported version " + std::to_string(version));
  }
  std::uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 4);

  std::vector<std::string> offenders;
  std::vector<std::string> seen;
  for (std::uint32_t r = 0; r < count; ++r) {
    std::uint32_t nl = 0;
    in.read(reinterpret_cast<char*>(&nl), 4);
    if (!in || nl > 4096) throw FormatError("checkpoint " + path + ": bad record header");
    std::string name(nl, '\0');
    in.read(name.data(), nl);
    std::uint32_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), 4);
    if (!in || rank > 8) throw FormatError("checkpoint " + path + ": bad rank for " + name);
    std::vector<int> shape(rank);
    std::size_t total = 1;
    for (auto& d : shape) {
      std::uint32_t u = 0;
      in.read(reinterpret_cast<char*>(&u), 4);
      d = static_cast<int>(u);
      total *= u;
    }
    std::vector<float> data(total);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(total * 4));
    if (!in) throw FormatError("checkpoint " + path + ": truncated data for " + name);

    if (name.rfind(prefix, 0) != 0) continue;
    seen.push_back(name);
    ParamT<T>* p = store.find(name);
    if (!p) {
      if (!allow_extra) offenders.push_back(name + " (not in model)");
      continue;
    }
    if (p->value.shape != shape) {
      offenders.push_back(name + " (file " + shape_str(shape) + " vs model " +
                          shape_str(p->value.shape) + ")");
      continue;
    }
    for (std::size_t i = 0; i < total; ++i) p->value.v[i] = static_cast<T>(data[i]);
  }
  for (const auto& p : store.items()) {
    if (p->name.rfind(prefix, 0) != 0) continue;
    bool found = false;
    for (const auto& s : seen) {
      if (s == p->name) {
        found = true;
        break;
      }
    }
    if (!found) offenders.push_back(p->name + " (missing from file)");
  }
  if (!offenders.empty()) {
    std::string msg = "checkpoint " + path + ": mismatched parameters:";
    for (const auto& o : offenders) msg += "\n  " + o;
    throw NameOrShapeMismatch(msg);
  }
}

using ParamStore = ParamStoreT<float>;
using Adam = AdamT<float>;

}  // namespace planeloc::nn
