#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "planeloc/geometry.hpp"
#include "planeloc/rng.hpp"

namespace planeloc::phantom {

// Landmark order is fixed; files store the role byte alongside each point.
enum class LandmarkRole : std::uint8_t {
  kHornLeft = 0,
  kHornRight = 1,
  kEndometrialBottom = 2,
  kWallBottom = 3,
};

struct PhantomConfig {
  int dim = 48;
  double spacing_mm = 0.5;
  double speckle_eta = 0.3;          // multiplicative speckle in [1-eta, 1+eta]
  double normal_jitter_deg = 6.0;    // per-plane tilt away from the orthogonal frame
  double center_offset_mm = 1.5;     // cavity center offset from the volume center
  double t_plane_shift_mm = 1.0;     // extra T-plane travel along the long axis
  double landmark_jitter_mm = 0.15;  // off-plane landmark jitter (<= 0.5 band)
};

// Synthetic volume: bright ellipsoidal body, darker tri-lobed cavity whose
// axes define the ground-truth S/T/C planes, multiplicative speckle, 3^3 box
// smoothing, and intensity gradients that make orientation visually
// unambiguous. Landmarks and plane parameters are snapped to float32 so the
// binary round trip is exact.
//
// The voxel pipeline uses only +,*,/,sqrt and polynomial smoothing, in a
// fixed single-threaded order, so a (config, seed) pair reproduces the same
// voxel bytes on every run.
struct Phantom {
  geom::Volume vol;
  std::array<geom::Vec3, 4> landmarks;            // indexed by LandmarkRole
  std::array<geom::PlaneParams, 3> gt_planes;     // S, T, C
  std::uint64_t seed = 0;
};

Phantom generate(const PhantomConfig& cfg, std::uint64_t seed);

void save(const Phantom& p, const std::string& path);
Phantom load(const std::string& path);

struct DatasetSplit {
  std::vector<int> train, val, test;
};

// Pure function of (seed, ratios, count): deterministic shuffle, then
// floor(count*frac) for train and val, remainder to test.
DatasetSplit split_dataset(std::uint64_t seed, double train_frac, double val_frac, int count);

// Mean landmark configuration and mean planes over a training set, used by
// the landmark-aligned warm start.
struct Atlas {
  std::array<geom::Vec3, 4> landmarks;
  std::array<geom::PlaneParams, 3> planes;
};

Atlas compute_atlas(const std::vector<const Phantom*>& training);
void save_atlas(const Atlas& atlas, const std::string& path);
Atlas load_atlas(const std::string& path);

enum class WarmStartMode { kTrainNoise, kAlign };

struct WarmStartConfig {
  double angle_range_deg = 20.0;   // train-noise: uniform per angle
  double dist_range_mm = 4.0;      // train-noise: uniform offset
  double landmark_sigma_mm = 1.0;  // align: gaussian landmark noise
};

// Initial plane triple.  kTrainNoise perturbs each ground-truth plane
// independently; kAlign rigidly registers the atlas onto this phantom's
// noised landmarks and maps the atlas planes through.  atlas may be null for
// kTrainNoise only.
std::array<geom::PlaneParams, 3> warm_start(const Phantom& ph, WarmStartMode mode,
                                            const WarmStartConfig& cfg, const Atlas* atlas,
                                            Rng& rng);

}  // namespace planeloc::phantom
