#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "planeloc/errors.hpp"
#include "planeloc/marl/env.hpp"
#include "planeloc/nn/tensor.hpp"
#include "planeloc/rng.hpp"

namespace planeloc::marl {

struct Transition {
  nn::TensorF obs;       // {channels, h, w}
  std::array<int, kAgents> actions{};
  std::array<float, kAgents> rewards{};
  nn::TensorF next_obs;
  bool terminal = false;
};

// Fixed-capacity FIFO ring with proportional priorities.  New items enter at
// the running max priority; sampling indices stay valid until the next push.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity, double exponent = 0.6)
      : cap_(capacity), exponent_(exponent) {}

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return cap_; }
  const Transition& at(std::size_t i) const { return items_[i]; }

  void push(Transition t) {
    if (items_.size() < cap_) {
      items_.push_back(std::move(t));
      prio_.push_back(max_p_);
    } else {
      items_[head_] = std::move(t);
      prio_[head_] = max_p_;
      head_ = (head_ + 1) % cap_;
    }
  }

  void update_priority(std::size_t i, float p) {
    prio_[i] = p;
    if (p > max_p_) max_p_ = p;
  }
  float priority(std::size_t i) const { return prio_[i]; }

  std::vector<std::size_t> sample_uniform(std::size_t n, Rng& rng) const {
    if (items_.size() < n || n == 0) {
      throw EmptyBuffer("uniform sample of " + std::to_string(n) + " from " +
                        std::to_string(items_.size()));
    }
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = static_cast<std::size_t>(rng.next_int(items_.size()));
    return idx;
  }

  std::vector<std::size_t> sample_proportional(std::size_t n, Rng& rng) const {
    if (items_.size() < n || n == 0) {
      throw EmptyBuffer("priority sample of " + std::to_string(n) + " from " +
                        std::to_string(items_.size()));
    }
    std::vector<double> w(items_.size());
    double total = 0;
    for (std::size_t i = 0; i < items_.size(); ++i) {
      w[i] = std::pow(static_cast<double>(prio_[i]), exponent_);
      total += w[i];
    }
    std::vector<std::size_t> idx(n);
    for (auto& out : idx) {
      const double u = rng.uniform(0.0, total);
      double acc = 0;
      out = items_.size() - 1;
      for (std::size_t i = 0; i < items_.size(); ++i) {
        acc += w[i];
        if (u < acc) {
          out = i;
          break;
        }
      }
    }
    return idx;
  }

 private:
  std::vector<Transition> items_;
  std::vector<float> prio_;
  std::size_t head_ = 0;  // next overwrite position once full
  std::size_t cap_;
  double exponent_;
  float max_p_ = 1.0f;
};

}  // namespace planeloc::marl
