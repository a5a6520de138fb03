#include "planeloc/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace planeloc::geom {

Vec3 unit_normal(const PlaneParams& p) {
  Vec3 n = raw_normal(p);
  double len = norm(n);
  if (len <= 1e-6) {
    throw DegenerateNormal("plane normal has norm <= 1e-6 (angles all near 90 degrees)");
  }
  return {n.x / len, n.y / len, n.z / len};
}

PlaneParams flip(const PlaneParams& p) {
  return PlaneParams::from_units(PlaneParams::kHalfTurn - p.zeta_units(),
                                 PlaneParams::kHalfTurn - p.beta_units(),
                                 PlaneParams::kHalfTurn - p.phi_units(), -p.d_units());
}

PlaneParams canonicalize(const PlaneParams& p) {
  if (p.d_units() < 0) return flip(p);
  if (p.d_units() > 0) return p;
  for (int axis = 0; axis < 3; ++axis) {
    int s = component_sign(p.angle_units(axis));
    if (s > 0) return p;
    if (s < 0) return flip(p);
  }
  return p;
}

double plane_distance(const PlaneParams& p, const PlaneParams& g, double d_scale) {
  if (!(d_scale > 0.0)) throw InvalidConfig("plane_distance: d_scale must be positive");
  PlaneParams cp = canonicalize(p);
  PlaneParams cg = canonicalize(g);
  Vec3 np = unit_normal(cp);
  Vec3 ng = unit_normal(cg);
  Vec3 dn = np - ng;
  double dd = static_cast<double>(cp.d_units() - cg.d_units()) * 1e-7 / d_scale;
  return std::sqrt(dot(dn, dn) + dd * dd);
}

double dihedral_deg(const PlaneParams& a, const PlaneParams& b) {
  double c = std::fabs(dot(unit_normal(a), unit_normal(b)));
  if (c > 1.0) c = 1.0;
  constexpr double kRadToDeg = 57.29577951308232;
  return std::acos(c) * kRadToDeg;
}

PlaneParams apply_action(const PlaneParams& p, int action, double angle_step_deg,
                         double dist_step_mm) {
  if (action < 0 || action >= kActionsPerAgent) {
    throw InvalidConfig("apply_action: action index out of range");
  }
  int axis = action / 2;
  std::int64_t sign = (action % 2 == 0) ? 1 : -1;
  if (axis == 3) {
    std::int64_t step = PlaneParams::quantize_mm(dist_step_mm);
    if (step <= 0) throw InvalidConfig("apply_action: dist step quantizes to zero");
    return PlaneParams::from_units(p.zeta_units(), p.beta_units(), p.phi_units(),
                                   p.d_units() + sign * step);
  }
  std::int64_t step = PlaneParams::quantize_angle(angle_step_deg);
  if (step <= 0) throw InvalidConfig("apply_action: angle step quantizes to zero");
  std::int64_t zu = p.zeta_units(), bu = p.beta_units(), pu = p.phi_units();
  (axis == 0 ? zu : axis == 1 ? bu : pu) += sign * step;
  return PlaneParams::from_units(zu, bu, pu, p.d_units());
}

Vec3 transform_point(const RigidTransform& T, const Vec3& p) {
  return {T.R[0][0] * p.x + T.R[0][1] * p.y + T.R[0][2] * p.z + T.t.x,
          T.R[1][0] * p.x + T.R[1][1] * p.y + T.R[1][2] * p.z + T.t.y,
          T.R[2][0] * p.x + T.R[2][1] * p.y + T.R[2][2] * p.z + T.t.z};
}

RigidTransform procrustes_align(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  if (src.size() != dst.size()) {
    throw ShapeMismatch("procrustes_align: point counts differ");
  }
  if (src.size() < 3) {
    throw ShapeMismatch("procrustes_align: need at least 3 points");
  }
  const int n = static_cast<int>(src.size());
  Eigen::Vector3d ms = Eigen::Vector3d::Zero(), md = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) {
    ms += Eigen::Vector3d(src[i].x, src[i].y, src[i].z);
    md += Eigen::Vector3d(dst[i].x, dst[i].y, dst[i].z);
  }
  ms /= n;
  md /= n;

  Eigen::MatrixXd S(3, n);
  Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
  for (int i = 0; i < n; ++i) {
    Eigen::Vector3d cs = Eigen::Vector3d(src[i].x, src[i].y, src[i].z) - ms;
    Eigen::Vector3d cd = Eigen::Vector3d(dst[i].x, dst[i].y, dst[i].z) - md;
    S.col(i) = cs;
    H += cs * cd.transpose();
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> src_svd(S);
  const auto& sv = src_svd.singularValues();
  if (sv(1) <= 1e-9 * std::max(1.0, sv(0))) {
    throw DegenerateConfiguration("procrustes_align: source landmarks are collinear");
  }

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d U = svd.matrixU(), V = svd.matrixV();
  Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
  if ((V * U.transpose()).determinant() < 0) D(2, 2) = -1.0;
  Eigen::Matrix3d R = V * D * U.transpose();
  Eigen::Vector3d t = md - R * ms;

  RigidTransform T;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) T.R[r][c] = R(r, c);
  T.t = {t(0), t(1), t(2)};
  return T;
}

PlaneParams transform_plane(const RigidTransform& T, const PlaneParams& p) {
  Vec3 n = unit_normal(p);
  Vec3 x0 = -p.d() * n;
  Vec3 n2 = normalized(transform_point({T.R, {0, 0, 0}}, n));
  Vec3 x2 = transform_point(T, x0);
  double d2 = -dot(n2, x2);
  constexpr double kRadToDeg = 57.29577951308232;
  auto ang = [](double c) {
    if (c > 1.0) c = 1.0;
    if (c < -1.0) c = -1.0;
    return std::acos(c) * kRadToDeg;
  };
  return canonicalize(PlaneParams::from_values(ang(n2.x), ang(n2.y), ang(n2.z), d2));
}

void plane_frame(const Vec3& n, Vec3& u, Vec3& v) {
  const Vec3 axes[3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  int k = 0;
  double best = std::fabs(n.x);
  double ay = std::fabs(n.y), az = std::fabs(n.z);
  if (ay < best) {
    best = ay;
    k = 1;
  }
  if (az < best) k = 2;
  u = normalized(cross(n, axes[k]));
  v = cross(n, u);
}

Image extract_slice(const Volume& vol, const PlaneParams& p, int out_h, int out_w,
                    double pixel_spacing_mm) {
  if (out_h <= 0 || out_w <= 0) throw InvalidConfig("extract_slice: output size must be positive");
  if (!(pixel_spacing_mm > 0)) throw InvalidConfig("extract_slice: pixel spacing must be positive");
  Vec3 n = unit_normal(p);
  Vec3 u, v;
  plane_frame(n, u, v);
  Vec3 foot = -p.d() * n;

  const double cx = (vol.nx - 1) / 2.0;
  const double cy = (vol.ny - 1) / 2.0;
  const double cz = (vol.nz - 1) / 2.0;
  const double inv_sp = 1.0 / vol.spacing_mm;

  Image img;
  img.h = out_h;
  img.w = out_w;
  img.px.assign(static_cast<std::size_t>(out_h) * out_w, 0.0f);

  const double half_h = (out_h - 1) / 2.0;
  const double half_w = (out_w - 1) / 2.0;

  for (int i = 0; i < out_h; ++i) {
    double rv = (i - half_h) * pixel_spacing_mm;
    for (int j = 0; j < out_w; ++j) {
      double ru = (j - half_w) * pixel_spacing_mm;
      double wx = foot.x + ru * u.x + rv * v.x;
      double wy = foot.y + ru * u.y + rv * v.y;
      double wz = foot.z + ru * u.z + rv * v.z;
      double gx = wx * inv_sp + cx;
      double gy = wy * inv_sp + cy;
      double gz = wz * inv_sp + cz;

      double fx = std::floor(gx), fy = std::floor(gy), fz = std::floor(gz);
      int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy), z0 = static_cast<int>(fz);
      double tx = gx - fx, ty = gy - fy, tz = gz - fz;

      auto sample = [&](int x, int y, int z) -> double {
        if (x < 0 || y < 0 || z < 0 || x >= vol.nx || y >= vol.ny || z >= vol.nz) return 0.0;
        return vol.at(x, y, z);
      };

      double c00 = sample(x0, y0, z0) * (1 - tx) + sample(x0 + 1, y0, z0) * tx;
      double c10 = sample(x0, y0 + 1, z0) * (1 - tx) + sample(x0 + 1, y0 + 1, z0) * tx;
      double c01 = sample(x0, y0, z0 + 1) * (1 - tx) + sample(x0 + 1, y0, z0 + 1) * tx;
      double c11 = sample(x0, y0 + 1, z0 + 1) * (1 - tx) + sample(x0 + 1, y0 + 1, z0 + 1) * tx;
      double c0 = c00 * (1 - ty) + c10 * ty;
      double c1 = c01 * (1 - ty) + c11 * ty;
      img.at(i, j) = static_cast<float>(c0 * (1 - tz) + c1 * tz);
    }
  }
  return img;
}

std::vector<PlaneParams> load_planes_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open plane file: " + path);
  std::vector<PlaneParams> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    double z, b, ph, d;
    if (!(ss >> z >> b >> ph >> d)) {
      throw FormatError("plane file " + path + ": malformed line " + std::to_string(lineno));
    }
    out.push_back(PlaneParams::from_values(z, b, ph, d));
  }
  return out;
}

void save_planes_text(const std::string& path, const std::vector<PlaneParams>& planes) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write plane file: " + path);
  char buf[160];
  for (const auto& p : planes) {
    std::snprintf(buf, sizeof(buf), "%.7f %.7f %.7f %.7f\n", p.zeta(), p.beta(), p.phi(), p.d());
    out << buf;
  }
}

}  // namespace planeloc::geom
