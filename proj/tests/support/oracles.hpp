#pragma once

// Independent reference implementations used by tests to cross-check the
// library. These stay deliberately naive: direct formulas, no shared code
// with the implementation paths they verify.

#include <vector>

#include "planeloc/geometry.hpp"
#include "planeloc/rng.hpp"

namespace planeloc::test {

// Distance from a point to the plane defined by params, via the unit normal.
inline double point_plane_distance(const geom::Vec3& x, const geom::PlaneParams& p) {
  geom::Vec3 n = geom::unit_normal(p);
  return std::fabs(geom::dot(n, x) + p.d());
}

inline std::vector<geom::Vec3> sample_points_on_plane(const geom::PlaneParams& p, int count,
                                                      double extent_mm, Rng& rng) {
  geom::Vec3 n = geom::unit_normal(p);
  geom::Vec3 u, v;
  geom::plane_frame(n, u, v);
  geom::Vec3 x0 = -p.d() * n;
  std::vector<geom::Vec3> pts;
  pts.reserve(count);
  for (int i = 0; i < count; ++i) {
    double a = rng.uniform(-extent_mm, extent_mm);
    double b = rng.uniform(-extent_mm, extent_mm);
    pts.push_back(x0 + a * u + b * v);
  }
  return pts;
}

inline double max_point_to_plane(const std::vector<geom::Vec3>& pts,
                                 const geom::PlaneParams& p) {
  double worst = 0;
  for (const auto& x : pts) worst = std::max(worst, point_plane_distance(x, p));
  return worst;
}

inline geom::PlaneParams random_plane(Rng& rng, double d_range = 20.0) {
  return geom::PlaneParams::from_values(rng.uniform(0.0, 180.0), rng.uniform(0.0, 180.0),
                                        rng.uniform(0.0, 180.0), rng.uniform(-d_range, d_range));
}

}  // namespace planeloc::test
