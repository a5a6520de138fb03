#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "planeloc/nn/graph.hpp"

namespace planeloc::nn {

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  bool pass = false;
};

// Central finite differences in double precision against the recorded
// backward. `build` must be a pure function of the leaf values. Relative
// error per component is |a - fd| / max(1, |a|, |fd|).
inline GradCheckCase fd_check(
    const std::string& name,
    const std::function<GraphD::Id(GraphD&, const std::vector<GraphD::Id>&)>& build,
    std::vector<TensorD> leaves, double tol, double h = 1e-5) {
  GraphD g(true);
  std::vector<GraphD::Id> xs;
  xs.reserve(leaves.size());
  for (auto& t : leaves) xs.push_back(g.leaf(t));
  g.backward(build(g, xs));
  std::vector<TensorD> analytic;
  analytic.reserve(xs.size());
  for (auto id : xs) {
    analytic.push_back(g.grad_of(id).size() ? g.grad_of(id) : TensorD(g.val(id).shape));
  }

  auto eval = [&](const std::vector<TensorD>& pt) {
    GraphD ge(false);
    std::vector<GraphD::Id> exs;
    exs.reserve(pt.size());
    for (const auto& t : pt) exs.push_back(ge.input(t));
    return ge.val(build(ge, exs)).v[0];
  };

  GradCheckCase res;
  res.name = name;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    for (std::size_t i = 0; i < leaves[li].size(); ++i) {
      const double keep = leaves[li].v[i];
      leaves[li].v[i] = keep + h;
      const double fp = eval(leaves);
      leaves[li].v[i] = keep - h;
      const double fm = eval(leaves);
      leaves[li].v[i] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double a = analytic[li].v[i];
      const double rel = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
      res.max_rel_err = std::max(res.max_rel_err, rel);
      ++res.checked;
    }
  }
  res.pass = res.max_rel_err < tol;
  return res;
}

// Every differentiable primitive across `variants` random shape draws each.
// Straight-through ops are checked against their soft surrogate in closed
// form (the function the recorded backward claims to differentiate).
std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed, int variants, double tol);

}  // namespace planeloc::nn
