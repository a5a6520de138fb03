#include "planeloc/phantom.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "planeloc/rng.hpp"

namespace planeloc::phantom {

using geom::PlaneParams;
using geom::Vec3;

namespace {

constexpr char kMagic[4] = {'P', 'H', 'A', 'N'};
constexpr std::uint16_t kVersion = 1;

double smoothstep01(double t) {
  if (t <= 0) return 0;
  if (t >= 1) return 1;
  return t * t * (3 - 2 * t);
}

double clampd(double x, double lo, double hi) { return x < lo ? lo : (x > hi ? hi : x); }

struct Ellipsoid {
  Vec3 center;
  Vec3 ax[3];    // orthonormal axes
  double semi[3];

  double rho(const Vec3& p) const {
    Vec3 r = p - center;
    double s = 0;
    for (int i = 0; i < 3; ++i) {
      double c = geom::dot(ax[i], r) / semi[i];
      s += c * c;
    }
    return std::sqrt(s);
  }
};

Vec3 rotate_about(const Vec3& v, const Vec3& axis, double angle_rad) {
  // Rodrigues rotation, axis unit-length.
  double c = std::cos(angle_rad), s = std::sin(angle_rad);
  return v * c + geom::cross(axis, v) * s + axis * (geom::dot(axis, v) * (1 - c));
}

Vec3 random_unit(Rng& r) {
  while (true) {
    Vec3 v{r.uniform(-1, 1), r.uniform(-1, 1), r.uniform(-1, 1)};
    double n = geom::norm(v);
    if (n > 1e-3 && n <= 1.0) return v * (1.0 / n);
  }
}

Vec3 snap_f32(const Vec3& v) {
  return {static_cast<double>(static_cast<float>(v.x)),
          static_cast<double>(static_cast<float>(v.y)),
          static_cast<double>(static_cast<float>(v.z))};
}

double angle_from_cos(double c) {
  constexpr double kRadToDeg = 57.29577951308232;
  return std::acos(clampd(c, -1.0, 1.0)) * kRadToDeg;
}

// Canonical plane from a unit normal and offset, snapped so every field is
// exactly representable in float32 (and therefore stable through the binary
// format). Returns false when the result sits too close to an angle seam or
// sign boundary for the snap to be safe.
bool make_file_stable_plane(const Vec3& n, double d, PlaneParams& out) {
  PlaneParams raw = geom::canonicalize(PlaneParams::from_values(
      angle_from_cos(n.x), angle_from_cos(n.y), angle_from_cos(n.z), d));
  double vals[4] = {raw.zeta(), raw.beta(), raw.phi(), raw.d()};
  for (double& v : vals) v = static_cast<double>(static_cast<float>(v));
  PlaneParams snapped =
      PlaneParams::from_values(vals[0], vals[1], vals[2], vals[3]);
  // Seam / boundary guards: angles well away from 0, 90, 180 degrees in
  // sign-deciding terms, and |d| clearly nonzero, keep canonical form stable
  // under the float32 snap.
  constexpr std::int64_t kGuard = 200'000;  // 0.02 degree
  for (int a = 0; a < 3; ++a) {
    std::int64_t u = snapped.angle_units(a);
    if (u < kGuard || u > PlaneParams::kHalfTurn - kGuard) return false;
    if (std::llabs(u - 90 * PlaneParams::kUnitsPerDegree) < kGuard) return false;
  }
  if (std::llabs(snapped.d_units()) < PlaneParams::kUnitsPerMm / 100) return false;
  if (geom::canonicalize(snapped) != snapped) return false;
  // Verify the float32 save/load round trip directly.
  PlaneParams reload = PlaneParams::from_values(
      static_cast<double>(static_cast<float>(snapped.zeta())),
      static_cast<double>(static_cast<float>(snapped.beta())),
      static_cast<double>(static_cast<float>(snapped.phi())),
      static_cast<double>(static_cast<float>(snapped.d())));
  if (reload != snapped) return false;
  out = snapped;
  return true;
}

struct Anatomy {
  Vec3 x0;         // cavity center
  Vec3 w, q, h;    // long axis, in-C lateral, in-S out-of-C
  Vec3 n[3];       // S, T, C normals
  Ellipsoid body;
  Ellipsoid lobes[3];
  double grad_w, grad_c, grad_q;
};

bool try_build(const PhantomConfig& cfg, Rng r, Phantom& out, Anatomy& an) {
  // Random frame: quaternion rotation of the canonical axes.
  double quat[4];
  for (double& c : quat) c = r.normal();
  double qb = std::sqrt(quat[0] * quat[0] + quat[1] * quat[1] + quat[2] * quat[2] +
                        quat[3] * quat[3]);
  if (qb < 1e-6) return false;
  for (double& c : quat) c /= qb;
  double qw = quat[0], qx = quat[1], qy = quat[2], qz = quat[3];
  Vec3 aS{1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy + qw * qz), 2 * (qx * qz - qw * qy)};
  Vec3 aT{2 * (qx * qy - qw * qz), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz + qw * qx)};
  Vec3 aC{2 * (qx * qz + qw * qy), 2 * (qy * qz - qw * qx), 1 - 2 * (qx * qx + qy * qy)};

  constexpr double kDegToRad = 0.017453292519943295;
  Vec3 normals[3] = {aS, aT, aC};
  for (Vec3& nv : normals) {
    double ang = r.uniform(0.0, cfg.normal_jitter_deg) * kDegToRad;
    nv = geom::normalized(rotate_about(nv, random_unit(r), ang));
  }

  an.x0 = random_unit(r) * r.uniform(0.0, cfg.center_offset_mm);
  an.n[0] = normals[0];
  an.n[1] = normals[1];
  an.n[2] = normals[2];
  an.w = geom::normalized(geom::cross(normals[0], normals[2]));
  an.q = geom::normalized(geom::cross(normals[2], an.w));
  an.h = geom::normalized(geom::cross(normals[0], an.w));

  const double lh = r.uniform(3.8, 4.6);   // horn reach along +w
  const double wh = r.uniform(2.7, 3.3);   // horn lateral reach
  const double lb = r.uniform(4.6, 5.4);   // bottom reach along -w

  // Landmarks: horns and the endometrial bottom on the C plane, bottom points
  // on the S plane. In-plane jitter is free, off-plane jitter stays within
  // the 0.5 mm consistency band.
  auto in_jit = [&] { return r.uniform(-0.4, 0.4); };
  auto off_jit = [&] { return r.uniform(-cfg.landmark_jitter_mm, cfg.landmark_jitter_mm); };

  Vec3 horn_l = an.x0 + (lh + in_jit()) * an.w - (wh + in_jit()) * an.q + off_jit() * an.n[2];
  Vec3 horn_r = an.x0 + (lh + in_jit()) * an.w + (wh + in_jit()) * an.q + off_jit() * an.n[2];
  Vec3 endo = an.x0 - (lb + in_jit()) * an.w + off_jit() * an.n[2] + off_jit() * an.n[0];
  Vec3 wall = endo - (2.0 + 0.5 * in_jit()) * an.w + in_jit() * 0.5 * an.h + off_jit() * an.n[0];
  // Keep endo exactly shared between planes: its S-plane offset was already
  // applied; pull the C-plane component of wall off-plane jitter only.

  out.landmarks[0] = snap_f32(horn_l);
  out.landmarks[1] = snap_f32(horn_r);
  out.landmarks[2] = snap_f32(endo);
  out.landmarks[3] = snap_f32(wall);

  const double half_extent = (cfg.dim - 1) / 2.0 * cfg.spacing_mm;
  for (const Vec3& lm : out.landmarks) {
    if (std::fabs(lm.x) > half_extent - 1.0 || std::fabs(lm.y) > half_extent - 1.0 ||
        std::fabs(lm.z) > half_extent - 1.0) {
      return false;
    }
  }

  // Planes: S and C pass through the cavity center (endo sits on their
  // intersection line up to jitter), T gets its own travel along w.
  double d_s = -geom::dot(normals[0], an.x0);
  double d_c = -geom::dot(normals[2], an.x0);
  Vec3 t_point = an.x0 + r.uniform(-cfg.t_plane_shift_mm, cfg.t_plane_shift_mm) * an.w;
  double d_t = -geom::dot(normals[1], t_point);

  if (!make_file_stable_plane(normals[0], d_s, out.gt_planes[0])) return false;
  if (!make_file_stable_plane(normals[1], d_t, out.gt_planes[1])) return false;
  if (!make_file_stable_plane(normals[2], d_c, out.gt_planes[2])) return false;

  for (int a = 0; a < 3; ++a) {
    for (int b = a + 1; b < 3; ++b) {
      double dih = geom::dihedral_deg(out.gt_planes[a], out.gt_planes[b]);
      if (dih < 70.0 || dih > 90.0) return false;
    }
  }

  // Landmark/plane consistency on the snapped values.
  auto lm_dist = [&](const Vec3& x, const PlaneParams& p) {
    Vec3 n = geom::unit_normal(p);
    return std::fabs(geom::dot(n, x) + p.d());
  };
  if (lm_dist(out.landmarks[0], out.gt_planes[2]) > 0.5) return false;
  if (lm_dist(out.landmarks[1], out.gt_planes[2]) > 0.5) return false;
  if (lm_dist(out.landmarks[2], out.gt_planes[2]) > 0.5) return false;
  if (lm_dist(out.landmarks[2], out.gt_planes[0]) > 0.5) return false;
  if (lm_dist(out.landmarks[3], out.gt_planes[0]) > 0.5) return false;

  // Body and cavity shapes.
  an.body.center = an.x0 + 0.8 * an.w;
  an.body.ax[0] = an.w;
  an.body.ax[1] = an.q;
  an.body.ax[2] = an.n[2];
  an.body.semi[0] = r.uniform(7.8, 8.8);
  an.body.semi[1] = r.uniform(6.6, 7.4);
  an.body.semi[2] = r.uniform(5.4, 6.2);

  Vec3 arm_l = lh * an.w - wh * an.q;
  Vec3 arm_r = lh * an.w + wh * an.q;
  double arm_len = geom::norm(arm_l);
  an.lobes[0].center = an.x0 + 0.55 * arm_l;
  an.lobes[0].ax[0] = geom::normalized(arm_l);
  an.lobes[0].ax[1] = geom::normalized(geom::cross(an.n[2], an.lobes[0].ax[0]));
  an.lobes[0].ax[2] = an.n[2];
  an.lobes[0].semi[0] = 0.52 * arm_len;
  an.lobes[0].semi[1] = 1.5;
  an.lobes[0].semi[2] = 1.25;

  an.lobes[1].center = an.x0 + 0.55 * arm_r;
  an.lobes[1].ax[0] = geom::normalized(arm_r);
  an.lobes[1].ax[1] = geom::normalized(geom::cross(an.n[2], an.lobes[1].ax[0]));
  an.lobes[1].ax[2] = an.n[2];
  an.lobes[1].semi[0] = 0.52 * arm_len;
  an.lobes[1].semi[1] = 1.5;
  an.lobes[1].semi[2] = 1.25;

  an.lobes[2].center = an.x0 - 0.5 * lb * an.w;
  an.lobes[2].ax[0] = an.w;
  an.lobes[2].ax[1] = an.q;
  an.lobes[2].ax[2] = an.n[2];
  an.lobes[2].semi[0] = 0.55 * lb;
  an.lobes[2].semi[1] = 1.6;
  an.lobes[2].semi[2] = 1.35;

  an.grad_w = 0.10;
  an.grad_c = 0.06;
  an.grad_q = 0.04;
  return true;
}

void fill_volume(const PhantomConfig& cfg, const Anatomy& an, Rng speckle, Phantom& out) {
  const int n = cfg.dim;
  out.vol.nx = out.vol.ny = out.vol.nz = n;
  out.vol.spacing_mm = cfg.spacing_mm;
  out.vol.voxels.resize(out.vol.voxel_count());

  const double c = (n - 1) / 2.0;
  const double eta = cfg.speckle_eta;
  std::size_t idx = 0;
  for (int z = 0; z < n; ++z) {
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x, ++idx) {
        Vec3 p{(x - c) * cfg.spacing_mm, (y - c) * cfg.spacing_mm, (z - c) * cfg.spacing_mm};
        double rho = an.body.rho(p);
        double body = smoothstep01((1.06 - rho) / 0.12);
        double falloff = 1.0 - 0.30 * clampd(rho * rho, 0.0, 1.0);
        Vec3 rel = p - an.x0;
        double grad = 1.0 + an.grad_w * clampd(geom::dot(an.w, rel) / 8.0, -1.0, 1.0) +
                      an.grad_c * clampd(geom::dot(an.n[2], rel) / 8.0, -1.0, 1.0) +
                      an.grad_q * clampd(geom::dot(an.q, rel) / 8.0, -1.0, 1.0);
        double lobe = 0.0;
        for (const auto& e : an.lobes) {
          double lr = e.rho(p);
          double s = smoothstep01((1.0 - lr) / 0.18);
          if (s > lobe) lobe = s;
        }
        double intensity = (0.06 + 0.72 * body * falloff * grad) * (1.0 - 0.62 * lobe);
        double sp = 1.0 - eta + 2.0 * eta * speckle.next_double();
        out.vol.voxels[idx] = static_cast<float>(clampd(intensity * sp, 0.0, 1.0));
      }
    }
  }

  // 3^3 box smoothing, separable, count-normalized at the borders.
  auto pass = [&](int axis) {
    std::vector<float> src = out.vol.voxels;
    std::size_t stride = axis == 0 ? 1 : (axis == 1 ? static_cast<std::size_t>(n)
                                                    : static_cast<std::size_t>(n) * n);
    std::size_t i = 0;
    for (int z = 0; z < n; ++z) {
      for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x, ++i) {
          int coord = axis == 0 ? x : (axis == 1 ? y : z);
          double sum = src[i];
          int cnt = 1;
          if (coord > 0) {
            sum += src[i - stride];
            ++cnt;
          }
          if (coord < n - 1) {
            sum += src[i + stride];
            ++cnt;
          }
          out.vol.voxels[i] = static_cast<float>(sum / cnt);
        }
      }
    }
  };
  pass(0);
  pass(1);
  pass(2);
}

void write_bytes(std::ofstream& out, const void* p, std::size_t count) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(count));
}

template <class T>
void write_pod(std::ofstream& out, T v) {
  write_bytes(out, &v, sizeof(T));
}

struct Reader {
  std::ifstream in;
  std::size_t offset = 0;
  std::string path;

  void read(void* p, std::size_t count) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(in.gcount()) != count) {
      throw FormatError("phantom file " + path + ": unexpected end of file at byte " +
                        std::to_string(offset));
    }
    offset += count;
  }

  template <class T>
  T pod() {
    T v;
    read(&v, sizeof(T));
    return v;
  }
};

}  // namespace

Phantom generate(const PhantomConfig& cfg, std::uint64_t seed) {
  if (cfg.dim < 8 || cfg.spacing_mm <= 0) {
    throw InvalidConfig("phantom: dim must be >= 8 and spacing positive");
  }
  if (cfg.speckle_eta < 0 || cfg.speckle_eta >= 1) {
    throw InvalidConfig("phantom: speckle_eta must lie in [0,1)");
  }
  if (cfg.normal_jitter_deg < 0 || cfg.normal_jitter_deg > 10) {
    throw InvalidConfig("phantom: normal_jitter_deg must lie in [0,10] to keep dihedrals in [70,90]");
  }

  Rng root = Rng::from_seed(seed).split("phantom");
  Phantom out;
  Anatomy an;
  for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
    Rng r = root.split(attempt);
    if (try_build(cfg, r, out, an)) {
      out.seed = seed;
      fill_volume(cfg, an, root.split("speckle"), out);
      return out;
    }
  }
  throw InvalidConfig("phantom: could not satisfy geometry constraints after 100 attempts");
}

void save(const Phantom& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write phantom file: " + path);
  write_bytes(out, kMagic, 4);
  write_pod<std::uint16_t>(out, kVersion);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.vol.nx));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.vol.ny));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.vol.nz));
  write_pod<float>(out, static_cast<float>(p.vol.spacing_mm));
  write_pod<std::uint8_t>(out, 4);
  for (int i = 0; i < 4; ++i) {
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(i));
    write_pod<float>(out, static_cast<float>(p.landmarks[i].x));
    write_pod<float>(out, static_cast<float>(p.landmarks[i].y));
    write_pod<float>(out, static_cast<float>(p.landmarks[i].z));
  }
  for (const auto& plane : p.gt_planes) {
    write_pod<float>(out, static_cast<float>(plane.zeta()));
    write_pod<float>(out, static_cast<float>(plane.beta()));
    write_pod<float>(out, static_cast<float>(plane.phi()));
    write_pod<float>(out, static_cast<float>(plane.d()));
  }
  write_pod<std::uint64_t>(out, p.seed);
  write_bytes(out, p.vol.voxels.data(), p.vol.voxels.size() * sizeof(float));
  if (!out) throw IoError("short write to phantom file: " + path);
}

Phantom load(const std::string& path) {
  Reader r;
  r.path = path;
  r.in.open(path, std::ios::binary);
  if (!r.in) throw MissingArtifact("cannot open phantom file: " + path);

  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("phantom file " + path + ": bad magic at byte 0 (expected 'PHAN')");
  }
  auto version = r.pod<std::uint16_t>();
  if (version != kVersion) {
    throw VersionError("phantom file " + path + ": version " + std::to_string(version) +
                       " unsupported (expected " + std::to_string(kVersion) + ")");
  }

  Phantom p;
  auto nx = r.pod<std::uint32_t>();
  auto ny = r.pod<std::uint32_t>();
  auto nz = r.pod<std::uint32_t>();
  if (nx == 0 || ny == 0 || nz == 0 || nx > 4096 || ny > 4096 || nz > 4096) {
    throw FormatError("phantom file " + path + ": implausible dims at byte 6");
  }
  p.vol.nx = static_cast<int>(nx);
  p.vol.ny = static_cast<int>(ny);
  p.vol.nz = static_cast<int>(nz);
  p.vol.spacing_mm = r.pod<float>();
  auto lm_count = r.pod<std::uint8_t>();
  if (lm_count != 4) {
    throw FormatError("phantom file " + path + ": landmark count " + std::to_string(lm_count) +
                      " at byte 22 (expected 4)");
  }
  bool seen[4] = {false, false, false, false};
  for (int i = 0; i < 4; ++i) {
    auto role = r.pod<std::uint8_t>();
    if (role > 3 || seen[role]) {
      throw FormatError("phantom file " + path + ": bad landmark role at byte " +
                        std::to_string(r.offset - 1));
    }
    seen[role] = true;
    float x = r.pod<float>(), y = r.pod<float>(), z = r.pod<float>();
    p.landmarks[role] = {x, y, z};
  }
  for (auto& plane : p.gt_planes) {
    float z = r.pod<float>(), b = r.pod<float>(), ph = r.pod<float>(), d = r.pod<float>();
    plane = PlaneParams::from_values(z, b, ph, d);
  }
  p.seed = r.pod<std::uint64_t>();
  p.vol.voxels.resize(p.vol.voxel_count());
  r.read(p.vol.voxels.data(), p.vol.voxels.size() * sizeof(float));
  return p;
}

DatasetSplit split_dataset(std::uint64_t seed, double train_frac, double val_frac, int count) {
  if (count <= 0) throw InvalidConfig("split: count must be positive");
  if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0 + 1e-12) {
    throw InvalidConfig("split: fractions must be nonnegative and sum to <= 1");
  }
  std::vector<int> ids(count);
  for (int i = 0; i < count; ++i) ids[i] = i;
  Rng r = Rng::from_seed(seed).split("split");
  for (int i = count - 1; i > 0; --i) {
    int j = r.next_int(i + 1);
    std::swap(ids[i], ids[j]);
  }
  int n_train = static_cast<int>(std::floor(count * train_frac + 1e-9));
  int n_val = static_cast<int>(std::floor(count * val_frac + 1e-9));
  DatasetSplit s;
  s.train.assign(ids.begin(), ids.begin() + n_train);
  s.val.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  s.test.assign(ids.begin() + n_train + n_val, ids.end());
  return s;
}

Atlas compute_atlas(const std::vector<const Phantom*>& training) {
  if (training.empty()) throw EmptyBatch("compute_atlas: no training phantoms");
  // Phantoms are randomly oriented, so raw averages are meaningless. Rigidly
  // align every member onto the first one through its landmarks, then average
  // in that common frame.
  const std::size_t n_train = training.size();
  std::vector<Vec3> ref(training[0]->landmarks.begin(), training[0]->landmarks.end());

  std::array<Vec3, 4> lm_sum{};
  std::array<Vec3, 3> n_sum{};
  std::array<double, 3> d_sum{};
  std::array<Vec3, 3> n_ref;
  for (int k = 0; k < 3; ++k) n_ref[k] = geom::unit_normal(training[0]->gt_planes[k]);

  for (const Phantom* p : training) {
    std::vector<Vec3> src(p->landmarks.begin(), p->landmarks.end());
    geom::RigidTransform T = geom::procrustes_align(src, ref);
    for (int l = 0; l < 4; ++l) {
      lm_sum[l] = lm_sum[l] + geom::transform_point(T, p->landmarks[l]);
    }
    for (int k = 0; k < 3; ++k) {
      PlaneParams mapped = geom::transform_plane(T, p->gt_planes[k]);
      Vec3 n = geom::unit_normal(mapped);
      double d = mapped.d();
      if (geom::dot(n, n_ref[k]) < 0) {
        n = -n;
        d = -d;
      }
      n_sum[k] = n_sum[k] + n;
      d_sum[k] += d;
    }
  }

  Atlas a;
  for (int l = 0; l < 4; ++l) a.landmarks[l] = lm_sum[l] * (1.0 / static_cast<double>(n_train));
  for (int k = 0; k < 3; ++k) {
    Vec3 nmean = geom::normalized(n_sum[k]);
    double dmean = d_sum[k] / static_cast<double>(n_train);
    a.planes[k] = geom::canonicalize(PlaneParams::from_values(
        angle_from_cos(nmean.x), angle_from_cos(nmean.y), angle_from_cos(nmean.z), dmean));
  }
  return a;
}

void save_atlas(const Atlas& atlas, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write atlas file: " + path);
  out << "atlas 1\n";
  char buf[256];
  for (int i = 0; i < 4; ++i) {
    std::snprintf(buf, sizeof(buf), "landmark %d %.17g %.17g %.17g\n", i, atlas.landmarks[i].x,
                  atlas.landmarks[i].y, atlas.landmarks[i].z);
    out << buf;
  }
  for (const auto& p : atlas.planes) {
    std::snprintf(buf, sizeof(buf), "plane %.7f %.7f %.7f %.7f\n", p.zeta(), p.beta(), p.phi(),
                  p.d());
    out << buf;
  }
}

Atlas load_atlas(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("cannot open atlas file: " + path);
  std::string header;
  int ver = 0;
  in >> header >> ver;
  if (header != "atlas") throw FormatError("atlas file " + path + ": bad header");
  if (ver != 1) throw VersionError("atlas file " + path + ": unsupported version");
  Atlas a;
  int planes_seen = 0;
  std::string kind;
  while (in >> kind) {
    if (kind == "landmark") {
      int idx;
      double x, y, z;
      if (!(in >> idx >> x >> y >> z) || idx < 0 || idx > 3) {
        throw FormatError("atlas file " + path + ": malformed landmark line");
      }
      a.landmarks[idx] = {x, y, z};
    } else if (kind == "plane") {
      double z, b, p, d;
      if (!(in >> z >> b >> p >> d) || planes_seen >= 3) {
        throw FormatError("atlas file " + path + ": malformed plane line");
      }
      a.planes[planes_seen++] = PlaneParams::from_values(z, b, p, d);
    } else {
      throw FormatError("atlas file " + path + ": unknown record '" + kind + "'");
    }
  }
  if (planes_seen != 3) throw FormatError("atlas file " + path + ": expected 3 planes");
  return a;
}

std::array<geom::PlaneParams, 3> warm_start(const Phantom& ph, WarmStartMode mode,
                                            const WarmStartConfig& cfg, const Atlas* atlas,
                                            Rng& rng) {
  std::array<geom::PlaneParams, 3> out;
  if (mode == WarmStartMode::kTrainNoise) {
    for (int i = 0; i < 3; ++i) {
      const geom::PlaneParams& g = ph.gt_planes[static_cast<std::size_t>(i)];
      const double dz = rng.uniform(-cfg.angle_range_deg, cfg.angle_range_deg);
      const double db = rng.uniform(-cfg.angle_range_deg, cfg.angle_range_deg);
      const double dp = rng.uniform(-cfg.angle_range_deg, cfg.angle_range_deg);
      const double dd = rng.uniform(-cfg.dist_range_mm, cfg.dist_range_mm);
      out[static_cast<std::size_t>(i)] = geom::PlaneParams::from_values(
          g.zeta() + dz, g.beta() + db, g.phi() + dp, g.d() + dd);
    }
    return out;
  }
  if (!atlas) throw InvalidConfig("align warm start requires an atlas");
  std::vector<geom::Vec3> ref, noisy;
  for (int i = 0; i < 4; ++i) {
    ref.push_back(atlas->landmarks[static_cast<std::size_t>(i)]);
    geom::Vec3 l = ph.landmarks[static_cast<std::size_t>(i)];
    l.x += cfg.landmark_sigma_mm * rng.normal();
    l.y += cfg.landmark_sigma_mm * rng.normal();
    l.z += cfg.landmark_sigma_mm * rng.normal();
    noisy.push_back(l);
  }
  const geom::RigidTransform t = geom::procrustes_align(ref, noisy);
  for (int i = 0; i < 3; ++i) {
    out[static_cast<std::size_t>(i)] =
        geom::transform_plane(t, atlas->planes[static_cast<std::size_t>(i)]);
  }
  return out;
}

}  // namespace planeloc::phantom
