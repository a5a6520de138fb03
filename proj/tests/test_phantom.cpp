#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "planeloc/geometry.hpp"
#include "planeloc/phantom.hpp"

using namespace planeloc;
using namespace planeloc::phantom;
using geom::PlaneParams;
using geom::Vec3;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double point_plane_mm(const Vec3& x, const PlaneParams& p) {
  Vec3 n = geom::unit_normal(p);
  return std::fabs(geom::dot(n, x) + p.d());
}

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("generation is deterministic in seed and config") {
  PhantomConfig cfg;
  Phantom a = generate(cfg, 42);
  Phantom b = generate(cfg, 42);
  CHECK(a.vol.voxels == b.vol.voxels);
  for (int i = 0; i < 4; ++i) {
    CHECK(a.landmarks[i].x == b.landmarks[i].x);
    CHECK(a.landmarks[i].y == b.landmarks[i].y);
    CHECK(a.landmarks[i].z == b.landmarks[i].z);
  }
  for (int k = 0; k < 3; ++k) CHECK(a.gt_planes[k] == b.gt_planes[k]);

  Phantom c = generate(cfg, 43);
  CHECK(a.vol.voxels != c.vol.voxels);
}

TEST_CASE("generated phantoms satisfy the anatomy invariants") {
  PhantomConfig cfg;
  for (std::uint64_t seed = 100; seed < 140; ++seed) {
    Phantom p = generate(cfg, seed);
    CAPTURE(seed);

    CHECK(p.vol.nx == cfg.dim);
    CHECK(p.vol.voxels.size() == p.vol.voxel_count());

    float lo = 1e9f, hi = -1e9f;
    for (float v : p.vol.voxels) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(hi - lo > 0.2f);  // body vs background contrast survives smoothing

    for (int a = 0; a < 3; ++a) {
      for (int b = a + 1; b < 3; ++b) {
        double dih = geom::dihedral_deg(p.gt_planes[a], p.gt_planes[b]);
        CHECK(dih >= 70.0);
        CHECK(dih <= 90.0 + 1e-9);
      }
      CHECK(geom::canonicalize(p.gt_planes[a]) == p.gt_planes[a]);
    }

    const auto& c_plane = p.gt_planes[2];
    const auto& s_plane = p.gt_planes[0];
    CHECK(point_plane_mm(p.landmarks[0], c_plane) < 0.5);  // left horn on C
    CHECK(point_plane_mm(p.landmarks[1], c_plane) < 0.5);  // right horn on C
    CHECK(point_plane_mm(p.landmarks[2], c_plane) < 0.5);  // endo bottom on C
    CHECK(point_plane_mm(p.landmarks[2], s_plane) < 0.5);  // endo bottom on S
    CHECK(point_plane_mm(p.landmarks[3], s_plane) < 0.5);  // wall bottom on S

    double half = (cfg.dim - 1) / 2.0 * cfg.spacing_mm;
    for (const Vec3& lm : p.landmarks) {
      CHECK(std::fabs(lm.x) < half);
      CHECK(std::fabs(lm.y) < half);
      CHECK(std::fabs(lm.z) < half);
    }
  }
}

TEST_CASE("ground-truth planes survive a float32 round trip exactly") {
  PhantomConfig cfg;
  for (std::uint64_t seed = 200; seed < 230; ++seed) {
    Phantom p = generate(cfg, seed);
    for (const auto& plane : p.gt_planes) {
      PlaneParams reload = PlaneParams::from_values(
          static_cast<double>(static_cast<float>(plane.zeta())),
          static_cast<double>(static_cast<float>(plane.beta())),
          static_cast<double>(static_cast<float>(plane.phi())),
          static_cast<double>(static_cast<float>(plane.d())));
      CHECK(reload == plane);
    }
    for (const Vec3& lm : p.landmarks) {
      CHECK(static_cast<double>(static_cast<float>(lm.x)) == lm.x);
      CHECK(static_cast<double>(static_cast<float>(lm.y)) == lm.y);
      CHECK(static_cast<double>(static_cast<float>(lm.z)) == lm.z);
    }
  }
}

TEST_CASE("slices through the ground truth show the cavity") {
  PhantomConfig cfg;
  Phantom p = generate(cfg, 7);
  geom::Image img = geom::extract_slice(p.vol, p.gt_planes[2], 16, 16, 1.4);
  float lo = 1e9f, hi = -1e9f;
  for (float v : img.px) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(hi > 0.3f);        // hits the bright body
  CHECK(hi - lo > 0.15f);  // and the darker cavity or background
}

TEST_CASE("save and load round trip bit for bit") {
  PhantomConfig cfg;
  Phantom p = generate(cfg, 11);
  auto path_a = temp_file("phantom_rt_a.phan");
  auto path_b = temp_file("phantom_rt_b.phan");
  save(p, path_a.string());
  Phantom q = load(path_a.string());

  CHECK(q.seed == p.seed);
  CHECK(q.vol.nx == p.vol.nx);
  CHECK(q.vol.ny == p.vol.ny);
  CHECK(q.vol.nz == p.vol.nz);
  CHECK(q.vol.spacing_mm == doctest::Approx(p.vol.spacing_mm).epsilon(1e-7));
  CHECK(q.vol.voxels == p.vol.voxels);
  for (int i = 0; i < 4; ++i) {
    CHECK(q.landmarks[i].x == p.landmarks[i].x);
    CHECK(q.landmarks[i].y == p.landmarks[i].y);
    CHECK(q.landmarks[i].z == p.landmarks[i].z);
  }
  for (int k = 0; k < 3; ++k) CHECK(q.gt_planes[k] == p.gt_planes[k]);

  save(q, path_b.string());
  CHECK(slurp(path_a.string()) == slurp(path_b.string()));
  std::filesystem::remove(path_a);
  std::filesystem::remove(path_b);
}

TEST_CASE("loader rejects malformed files") {
  PhantomConfig cfg;
  Phantom p = generate(cfg, 3);
  auto path = temp_file("phantom_bad.phan");
  save(p, path.string());
  std::string bytes = slurp(path.string());

  SUBCASE("bad magic names byte 0") {
    std::string corrupt = bytes;
    corrupt[0] = 'X';
    std::ofstream(path, std::ios::binary).write(corrupt.data(), corrupt.size());
    bool threw = false;
    try {
      load(path.string());
    } catch (const FormatError& e) {
      threw = true;
      CHECK(std::string(e.what()).find("byte 0") != std::string::npos);
    }
    CHECK(threw);
  }

  SUBCASE("unknown version") {
    std::string corrupt = bytes;
    corrupt[4] = 9;
    std::ofstream(path, std::ios::binary).write(corrupt.data(), corrupt.size());
    CHECK_THROWS_AS(load(path.string()), VersionError);
  }

  SUBCASE("truncated voxel payload") {
    std::string corrupt = bytes.substr(0, bytes.size() - 17);
    std::ofstream(path, std::ios::binary).write(corrupt.data(), corrupt.size());
    CHECK_THROWS_AS(load(path.string()), FormatError);
  }

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load((path.parent_path() / "no_such.phan").string()), MissingArtifact);
  }

  std::filesystem::remove(path);
}

TEST_CASE("dataset split is exact, disjoint, and covering") {
  DatasetSplit s = split_dataset(5, 0.8, 0.1, 40);
  CHECK(s.train.size() == 32);
  CHECK(s.val.size() == 4);
  CHECK(s.test.size() == 4);

  std::set<int> all;
  for (int i : s.train) all.insert(i);
  for (int i : s.val) all.insert(i);
  for (int i : s.test) all.insert(i);
  CHECK(all.size() == 40);
  CHECK(*all.begin() == 0);
  CHECK(*all.rbegin() == 39);

  DatasetSplit again = split_dataset(5, 0.8, 0.1, 40);
  CHECK(again.train == s.train);
  CHECK(again.val == s.val);
  CHECK(again.test == s.test);

  DatasetSplit other = split_dataset(6, 0.8, 0.1, 40);
  CHECK(other.train != s.train);
}

TEST_CASE("atlas of a single phantom reproduces that phantom") {
  PhantomConfig cfg;
  Phantom p = generate(cfg, 321);
  Atlas a = compute_atlas({&p});
  for (int l = 0; l < 4; ++l) {
    CHECK(a.landmarks[l].x == doctest::Approx(p.landmarks[l].x).epsilon(1e-9));
    CHECK(a.landmarks[l].y == doctest::Approx(p.landmarks[l].y).epsilon(1e-9));
    CHECK(a.landmarks[l].z == doctest::Approx(p.landmarks[l].z).epsilon(1e-9));
  }
  for (int k = 0; k < 3; ++k) {
    CHECK(geom::dihedral_deg(a.planes[k], p.gt_planes[k]) < 1e-4);
    CHECK(std::fabs(a.planes[k].d() - p.gt_planes[k].d()) < 1e-4);
  }
}

TEST_CASE("atlas averages members in a common landmark-aligned frame") {
  PhantomConfig cfg;
  std::vector<Phantom> ps;
  for (std::uint64_t seed = 300; seed < 308; ++seed) ps.push_back(generate(cfg, seed));
  std::vector<const Phantom*> ptrs;
  for (const auto& p : ps) ptrs.push_back(&p);

  Atlas a = compute_atlas(ptrs);

  // Shape statistics survive averaging: pairwise landmark distances stay
  // inside the member envelope.
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      double lo = 1e9, hi = -1e9;
      for (const auto& p : ps) {
        double d = geom::norm(p.landmarks[i] - p.landmarks[j]);
        lo = std::min(lo, d);
        hi = std::max(hi, d);
      }
      double da = geom::norm(a.landmarks[i] - a.landmarks[j]);
      CHECK(da > lo - 0.3);
      CHECK(da < hi + 0.3);
    }
  }

  // The averaged planes keep the anatomy's structure: near-orthogonal
  // dihedrals and landmark consistency within a relaxed band.
  for (int k = 0; k < 3; ++k) CHECK(geom::canonicalize(a.planes[k]) == a.planes[k]);
  for (int x = 0; x < 3; ++x) {
    for (int y = x + 1; y < 3; ++y) {
      double dih = geom::dihedral_deg(a.planes[x], a.planes[y]);
      CHECK(dih > 60.0);
      CHECK(dih <= 90.0 + 1e-9);
    }
  }
  auto lm_dist = [](const Vec3& v, const PlaneParams& pl) {
    return std::fabs(geom::dot(geom::unit_normal(pl), v) + pl.d());
  };
  CHECK(lm_dist(a.landmarks[0], a.planes[2]) < 1.5);
  CHECK(lm_dist(a.landmarks[1], a.planes[2]) < 1.5);
  CHECK(lm_dist(a.landmarks[2], a.planes[0]) < 1.5);
  CHECK(lm_dist(a.landmarks[3], a.planes[0]) < 1.5);

  // Aligning any member onto the atlas brings its planes close to the
  // atlas planes; this is what the warm start relies on.
  for (const auto& p : ps) {
    std::vector<Vec3> src(p.landmarks.begin(), p.landmarks.end());
    std::vector<Vec3> dst(a.landmarks.begin(), a.landmarks.end());
    geom::RigidTransform T = geom::procrustes_align(src, dst);
    for (int k = 0; k < 3; ++k) {
      PlaneParams mapped = geom::transform_plane(T, p.gt_planes[k]);
      CHECK(geom::dihedral_deg(mapped, a.planes[k]) < 20.0);
    }
  }

  auto path = temp_file("atlas_rt.txt");
  save_atlas(a, path.string());
  Atlas b = load_atlas(path.string());
  for (int l = 0; l < 4; ++l) {
    CHECK(b.landmarks[l].x == a.landmarks[l].x);
  }
  for (int k = 0; k < 3; ++k) CHECK(b.planes[k] == a.planes[k]);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(compute_atlas({}), EmptyBatch);
}

TEST_CASE("config validation") {
  PhantomConfig cfg;
  cfg.dim = 4;
  CHECK_THROWS_AS(generate(cfg, 1), InvalidConfig);
  cfg = PhantomConfig{};
  cfg.speckle_eta = 1.5;
  CHECK_THROWS_AS(generate(cfg, 1), InvalidConfig);
  cfg = PhantomConfig{};
  cfg.normal_jitter_deg = 45;
  CHECK_THROWS_AS(generate(cfg, 1), InvalidConfig);
}

TEST_CASE("train-noise warm start brackets the ground truth") {
  PhantomConfig cfg;
  cfg.dim = 24;
  Phantom p = generate(cfg, 21);

  WarmStartConfig zero;
  zero.angle_range_deg = 0;
  zero.dist_range_mm = 0;
  Rng rng = Rng::from_seed(1);
  auto exact = warm_start(p, WarmStartMode::kTrainNoise, zero, nullptr, rng);
  for (int i = 0; i < 3; ++i) CHECK(exact[i] == p.gt_planes[i]);

  WarmStartConfig dflt;
  Rng r2 = Rng::from_seed(2);
  for (int trial = 0; trial < 1000; ++trial) {
    auto init = warm_start(p, WarmStartMode::kTrainNoise, dflt, nullptr, r2);
    for (int i = 0; i < 3; ++i) {
      CHECK(geom::dihedral_deg(init[i], p.gt_planes[i]) <= 35.0);
      CHECK(std::abs(init[i].d() - p.gt_planes[i].d()) <= 4.0 + 1e-6);
    }
  }

  Rng ra = Rng::from_seed(9);
  Rng rb = Rng::from_seed(9);
  auto wa = warm_start(p, WarmStartMode::kTrainNoise, dflt, nullptr, ra);
  auto wb = warm_start(p, WarmStartMode::kTrainNoise, dflt, nullptr, rb);
  for (int i = 0; i < 3; ++i) CHECK(wa[i] == wb[i]);
}

TEST_CASE("aligned warm start recovers the ground truth at zero noise") {
  PhantomConfig cfg;
  cfg.dim = 24;
  Phantom p = generate(cfg, 22);
  std::vector<const Phantom*> self{&p};
  Atlas atlas = compute_atlas(self);

  WarmStartConfig ws;
  ws.landmark_sigma_mm = 0.0;
  Rng rng = Rng::from_seed(3);
  auto init = warm_start(p, WarmStartMode::kAlign, ws, &atlas, rng);
  for (int i = 0; i < 3; ++i) {
    CHECK(geom::dihedral_deg(init[i], p.gt_planes[i]) < 1e-6);
    CHECK(geom::plane_distance(init[i], p.gt_planes[i], 20.0) < 1e-7);
  }

  CHECK_THROWS_AS(warm_start(p, WarmStartMode::kAlign, ws, nullptr, rng), InvalidConfig);

  // noisy landmarks still give a bounded start
  WarmStartConfig noisy;
  Rng r2 = Rng::from_seed(4);
  for (int trial = 0; trial < 50; ++trial) {
    auto w = warm_start(p, WarmStartMode::kAlign, noisy, &atlas, r2);
    for (int i = 0; i < 3; ++i) CHECK(geom::dihedral_deg(w[i], p.gt_planes[i]) < 45.0);
  }
}
