#pragma once

#include <array>

#include "planeloc/geometry.hpp"
#include "planeloc/nn/tensor.hpp"
#include "planeloc/phantom.hpp"

namespace planeloc::marl {

inline constexpr int kAgents = 3;
inline constexpr int kHistory = 3;  // planes kept per agent; obs has kAgents*kHistory channels
inline constexpr int kTrainSteps = 50;
inline constexpr int kEvalSteps = 30;

enum class EnvMode { kTrain, kEval };

struct EnvConfig {
  int obs_h = 24, obs_w = 24;
  double pixel_spacing_mm = 1.0;
  double angle_step_deg = 0.5;
  double dist_step_mm = 0.1;
  double d_scale_mm = 0.0;  // 0: half the volume diagonal
};

double default_d_scale(const geom::Volume& vol);
double d_scale_for(const EnvConfig& cfg, const phantom::Phantom& ph);

// Per-agent ring of the last kHistory predicted planes, newest last.
struct EnvState {
  std::array<std::array<geom::PlaneParams, kHistory>, kAgents> history;
  int step = 0;
  EnvMode mode = EnvMode::kTrain;
  const phantom::Phantom* vol = nullptr;
};

EnvState reset(const phantom::Phantom& ph, EnvMode mode,
               const std::array<geom::PlaneParams, kAgents>& start);

bool is_terminal(const EnvState& s, EnvMode mode);

// Channel order: agent S oldest->newest, then T, then C.
nn::TensorF observe(const EnvState& s, const EnvConfig& cfg);

// Applies one action per agent, returns sgn of each agent's distance-to-GT
// decrease.  Throws TerminalStateStep once the episode's step budget is
// spent.
std::array<int, kAgents> step(EnvState& s, const std::array<int, kAgents>& actions,
                              const EnvConfig& cfg);

// Action minimizing the post-move distance to ground truth (ties -> lowest
// action index).
int oracle_action(const EnvState& s, int agent, const EnvConfig& cfg);

}  // namespace planeloc::marl
