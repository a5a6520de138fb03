#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "planeloc/errors.hpp"

namespace planeloc::geom {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalized(const Vec3& v) {
  double n = norm(v);
  return {v.x / n, v.y / n, v.z / n};
}

// A plane cos(zeta) x + cos(beta) y + cos(phi) z + d = 0, coordinates in mm
// relative to the volume center. Angles are direction angles in degrees,
// d is the signed offset along the unit normal.
//
// Fields are stored as integer multiples of 1e-7 degree / 1e-7 mm. On this
// grid the +-step actions, the [0,180) wrap, and canonicalization are exact
// integer arithmetic, so inverse-pair and idempotence identities hold
// bit-for-bit. Values are quantized once on construction (error <= 5e-8).
class PlaneParams {
 public:
  static constexpr std::int64_t kUnitsPerDegree = 10'000'000;   // 1e-7 deg quanta
  static constexpr std::int64_t kUnitsPerMm = 10'000'000;       // 1e-7 mm quanta
  static constexpr std::int64_t kHalfTurn = 180 * kUnitsPerDegree;

  PlaneParams() = default;

  static PlaneParams from_values(double zeta_deg, double beta_deg, double phi_deg, double d_mm) {
    PlaneParams p;
    p.zeta_u_ = wrap_angle(quantize_angle(zeta_deg));
    p.beta_u_ = wrap_angle(quantize_angle(beta_deg));
    p.phi_u_ = wrap_angle(quantize_angle(phi_deg));
    p.d_u_ = quantize_mm(d_mm);
    return p;
  }

  static PlaneParams from_units(std::int64_t zu, std::int64_t bu, std::int64_t pu, std::int64_t du) {
    PlaneParams p;
    p.zeta_u_ = wrap_angle(zu);
    p.beta_u_ = wrap_angle(bu);
    p.phi_u_ = wrap_angle(pu);
    p.d_u_ = du;
    return p;
  }

  double zeta() const { return static_cast<double>(zeta_u_) * 1e-7; }
  double beta() const { return static_cast<double>(beta_u_) * 1e-7; }
  double phi() const { return static_cast<double>(phi_u_) * 1e-7; }
  double d() const { return static_cast<double>(d_u_) * 1e-7; }

  std::int64_t zeta_units() const { return zeta_u_; }
  std::int64_t beta_units() const { return beta_u_; }
  std::int64_t phi_units() const { return phi_u_; }
  std::int64_t d_units() const { return d_u_; }

  std::int64_t angle_units(int axis) const {
    return axis == 0 ? zeta_u_ : (axis == 1 ? beta_u_ : phi_u_);
  }

  friend bool operator==(const PlaneParams&, const PlaneParams&) = default;

  static std::int64_t quantize_angle(double deg) {
    double r = std::fmod(deg, 360.0);
    return static_cast<std::int64_t>(std::llround(r * 1e7));
  }
  static std::int64_t quantize_mm(double mm) {
    return static_cast<std::int64_t>(std::llround(mm * 1e7));
  }
  static std::int64_t wrap_angle(std::int64_t u) {
    std::int64_t r = u % kHalfTurn;
    return r < 0 ? r + kHalfTurn : r;
  }

 private:
  std::int64_t zeta_u_ = 0;
  std::int64_t beta_u_ = 0;
  std::int64_t phi_u_ = 0;
  std::int64_t d_u_ = 0;
};

// cos of a quantized angle; exact 1/0 at the 0 and 90 degree grid points so
// axis-aligned planes have exact axis normals.
inline double cos_units(std::int64_t u) {
  constexpr std::int64_t kQuarter = 90 * PlaneParams::kUnitsPerDegree;
  if (u == 0) return 1.0;
  if (u == kQuarter) return 0.0;
  constexpr double kDegToRad = 0.017453292519943295;
  return std::cos(static_cast<double>(u) * 1e-7 * kDegToRad);
}

inline Vec3 raw_normal(const PlaneParams& p) {
  return {cos_units(p.zeta_units()), cos_units(p.beta_units()), cos_units(p.phi_units())};
}

// Unit normal; throws DegenerateNormal when the direction-cosine vector has
// norm <= 1e-6 (all angles near 90 degrees).
Vec3 unit_normal(const PlaneParams& p);

// Sign of a normal component decided on the integer grid: positive below 90
// degrees, zero at exactly 90, negative above. Consistent under angle flip.
inline int component_sign(std::int64_t angle_units) {
  constexpr std::int64_t kQuarter = 90 * PlaneParams::kUnitsPerDegree;
  if (angle_units < kQuarter) return 1;
  if (angle_units == kQuarter) return 0;
  return -1;
}

// Parameter-level sign flip: angles map to 180 - a (mod 180), d negates.
PlaneParams flip(const PlaneParams& p);

// Canonical representative of {p, flip(p)}: d > 0, or d == 0 and the first
// nonzero normal component positive. Idempotent; exact on the integer grid.
PlaneParams canonicalize(const PlaneParams& p);

// D(p, g) = || (n_p - n_g, (d_p - d_g) / d_scale) ||_2 on canonical forms.
double plane_distance(const PlaneParams& p, const PlaneParams& g, double d_scale);

// arccos(clamp(|n_a . n_b|, 0, 1)) in degrees.
double dihedral_deg(const PlaneParams& a, const PlaneParams& b);

// Actions 0..7: {+zeta, -zeta, +beta, -beta, +phi, -phi, +d, -d}.
inline constexpr int kActionsPerAgent = 8;
PlaneParams apply_action(const PlaneParams& p, int action, double angle_step_deg,
                         double dist_step_mm);

struct RigidTransform {
  std::array<std::array<double, 3>, 3> R{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  Vec3 t;
};

Vec3 transform_point(const RigidTransform& T, const Vec3& p);

// Rotation + translation (no scaling) minimizing least-squares landmark error,
// with reflection correction. Pre: >= 3 points, equal counts (ShapeMismatch);
// throws DegenerateConfiguration when src is collinear (second singular value
// of the centered set <= 1e-9 relative to the first).
RigidTransform procrustes_align(const std::vector<Vec3>& src, const std::vector<Vec3>& dst);

// Maps the plane through T; result is canonicalized.
PlaneParams transform_plane(const RigidTransform& T, const PlaneParams& p);

struct Volume {
  int nx = 0, ny = 0, nz = 0;
  double spacing_mm = 0;
  std::vector<float> voxels;  // x fastest: idx = (z * ny + y) * nx + x

  float at(int x, int y, int z) const {
    return voxels[(static_cast<std::size_t>(z) * ny + y) * nx + x];
  }
  float& at(int x, int y, int z) {
    return voxels[(static_cast<std::size_t>(z) * ny + y) * nx + x];
  }
  std::size_t voxel_count() const {
    return static_cast<std::size_t>(nx) * ny * nz;
  }
};

struct Image {
  int h = 0, w = 0;
  std::vector<float> px;  // row-major

  float at(int i, int j) const { return px[static_cast<std::size_t>(i) * w + j]; }
  float& at(int i, int j) { return px[static_cast<std::size_t>(i) * w + j]; }
};

// In-plane basis: e_k is the canonical axis with the smallest |n . e_k|
// (ties -> lowest index), u = normalize(n x e_k), v = n x u.
void plane_frame(const Vec3& n, Vec3& u, Vec3& v);

// Oblique slice: out_h x out_w image sampled around the plane's foot point
// (-d n from the volume center) along (u, v), trilinear interpolation, zero
// outside the volume. Rows advance along v, columns along u.
Image extract_slice(const Volume& vol, const PlaneParams& p, int out_h, int out_w,
                    double pixel_spacing_mm);

// Text file, one plane per line: "zeta beta phi d", fixed 7 decimals (exact
// round trip of the quantized grid).
std::vector<PlaneParams> load_planes_text(const std::string& path);
void save_planes_text(const std::string& path, const std::vector<PlaneParams>& planes);

}  // namespace planeloc::geom
