#pragma once

#include <array>
#include <string>
#include <vector>

#include "planeloc/geometry.hpp"

namespace planeloc::metrics {

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

// Mean local structural similarity over all fully interior gaussian windows.
// ShapeMismatch on unequal shapes, ImageTooSmall below the window size.
double ssim(const geom::Image& a, const geom::Image& b, const SsimConfig& cfg = {});

// Plane errors on canonical forms: dihedral angle in degrees, offset gap in mm.
double ang_deg(const geom::PlaneParams& p, const geom::PlaneParams& g);
double dis_mm(const geom::PlaneParams& p, const geom::PlaneParams& g);

// Unitless mixed sum of the three angle and three offset errors.
double sad(const std::array<double, 3>& ang, const std::array<double, 3>& dis);

struct VolumeRow {
  std::string id;
  std::array<double, 3> ang{};    // S, T, C in degrees
  std::array<double, 3> dis{};    // S, T, C in mm
  std::array<double, 3> ssim{};   // S, T, C
};

struct StepTrace {
  std::vector<std::array<double, 3>> ang;    // per step, per plane
  std::vector<std::array<double, 3>> dis;
  std::vector<std::array<double, 3>> q_max;  // per step, per agent
};

// CSV row stream with the fixed trace header; sad column recomputed per step.
void write_trace_csv(const std::string& path, const StepTrace& trace);

// Writes volumes.csv, aggregate.csv (mean/std per plane plus an Avg row over
// plane-averaged volume scores) and, for every row with a trace, the
// self-contained <id>_sad.svg and <id>_q.svg line plots. Population std.
// Traces run parallel to rows; pass an empty vector to skip the plots.
void emit_report(const std::string& dir, const std::vector<VolumeRow>& rows,
                 const std::vector<StepTrace>& traces);

}  // namespace planeloc::metrics
