#include "planeloc/marl/env.hpp"

#include <cmath>

#include "planeloc/errors.hpp"

namespace planeloc::marl {

double default_d_scale(const geom::Volume& vol) {
  const double dx = vol.nx * vol.spacing_mm;
  const double dy = vol.ny * vol.spacing_mm;
  const double dz = vol.nz * vol.spacing_mm;
  return 0.5 * std::sqrt(dx * dx + dy * dy + dz * dz);
}

double d_scale_for(const EnvConfig& cfg, const phantom::Phantom& ph) {
  return cfg.d_scale_mm > 0 ? cfg.d_scale_mm : default_d_scale(ph.vol);
}

EnvState reset(const phantom::Phantom& ph, EnvMode mode,
               const std::array<geom::PlaneParams, kAgents>& start) {
  EnvState s;
  s.mode = mode;
  s.vol = &ph;
  for (int a = 0; a < kAgents; ++a) {
    for (int h = 0; h < kHistory; ++h) {
      s.history[static_cast<std::size_t>(a)][static_cast<std::size_t>(h)] =
          start[static_cast<std::size_t>(a)];
    }
  }
  return s;
}

bool is_terminal(const EnvState& s, EnvMode mode) {
  return s.step >= (mode == EnvMode::kTrain ? kTrainSteps : kEvalSteps);
}

nn::TensorF observe(const EnvState& s, const EnvConfig& cfg) {
  nn::TensorF obs({kAgents * kHistory, cfg.obs_h, cfg.obs_w});
  const std::size_t plane_px = static_cast<std::size_t>(cfg.obs_h) * cfg.obs_w;
  for (int a = 0; a < kAgents; ++a) {
    for (int h = 0; h < kHistory; ++h) {
      const geom::Image img =
          geom::extract_slice(s.vol->vol, s.history[static_cast<std::size_t>(a)][static_cast<std::size_t>(h)],
                              cfg.obs_h, cfg.obs_w, cfg.pixel_spacing_mm);
      const std::size_t ch = static_cast<std::size_t>(a * kHistory + h);
      std::copy(img.px.begin(), img.px.end(), obs.v.begin() + static_cast<std::ptrdiff_t>(ch * plane_px));
    }
  }
  return obs;
}

std::array<int, kAgents> step(EnvState& s, const std::array<int, kAgents>& actions,
                              const EnvConfig& cfg) {
  if (is_terminal(s, s.mode)) throw TerminalStateStep("episode step budget exhausted");
  for (int act : actions) {
    if (act < 0 || act >= geom::kActionsPerAgent) {
      throw InvalidConfig("action index out of range: " + std::to_string(act));
    }
  }
  const double d_scale = d_scale_for(cfg, *s.vol);
  std::array<int, kAgents> rewards{};
  for (int a = 0; a < kAgents; ++a) {
    const int act = actions[static_cast<std::size_t>(a)];
    auto& ring = s.history[static_cast<std::size_t>(a)];
    const geom::PlaneParams prev = ring[kHistory - 1];
    const geom::PlaneParams next =
        geom::apply_action(prev, act, cfg.angle_step_deg, cfg.dist_step_mm);
    const geom::PlaneParams& gt = s.vol->gt_planes[static_cast<std::size_t>(a)];
    const double before = geom::plane_distance(prev, gt, d_scale);
    const double after = geom::plane_distance(next, gt, d_scale);
    rewards[static_cast<std::size_t>(a)] = before > after ? 1 : (before < after ? -1 : 0);
    for (int h = 0; h + 1 < kHistory; ++h) ring[static_cast<std::size_t>(h)] = ring[static_cast<std::size_t>(h) + 1];
    ring[kHistory - 1] = next;
  }
  ++s.step;
  return rewards;
}

int oracle_action(const EnvState& s, int agent, const EnvConfig& cfg) {
  const double d_scale = d_scale_for(cfg, *s.vol);
  const geom::PlaneParams& cur = s.history[static_cast<std::size_t>(agent)][kHistory - 1];
  const geom::PlaneParams& gt = s.vol->gt_planes[static_cast<std::size_t>(agent)];
  int best = 0;
  double best_d = 0;
  for (int a = 0; a < geom::kActionsPerAgent; ++a) {
    const double d = geom::plane_distance(
        geom::apply_action(cur, a, cfg.angle_step_deg, cfg.dist_step_mm), gt, d_scale);
    if (a == 0 || d < best_d) {
      best = a;
      best_d = d;
    }
  }
  return best;
}

}  // namespace planeloc::marl
