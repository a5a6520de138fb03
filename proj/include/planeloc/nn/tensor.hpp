#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "planeloc/errors.hpp"

namespace planeloc::nn {

// Dense row-major N-d array. Rank is informal: ops interpret shapes
// themselves (e.g. conv expects {N,C,H,W}).
template <class T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> v;

  TensorT() = default;
  explicit TensorT(std::vector<int> s) : shape(std::move(s)) {
    v.assign(count(shape), T(0));
  }
  TensorT(std::vector<int> s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
    if (v.size() != count(shape)) {
      throw ShapeMismatch("tensor: data length " + std::to_string(v.size()) +
                          " does not match shape product " + std::to_string(count(shape)));
    }
  }

  static std::size_t count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
  }

  std::size_t size() const { return v.size(); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string r = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + ")";
}

using TensorF = TensorT<float>;
using TensorD = TensorT<double>;

}  // namespace planeloc::nn
