#pragma once

// Synthetic 4D beating-heart phantoms: a thick ellipsoidal myocardial shell,
// scaled per frame by a single-systole volume curve, plus the shift/rotate
// augmentation and dataset building with deterministic per-subject seeds.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "voxel.hpp"

namespace fnet {

constexpr int kPhantomFrames = 10;  // frame 1 is end-diastole

struct PhantomParams {
  int grid_size = 32;  // model is D x D x D x 10
  std::array<double, 3> outer_radii{12.0, 11.0, 10.0};
  double wall_thickness = 3.0;
  std::array<double, 3> center{15.5, 15.5, 15.5};
  int systole_frame = 5;    // in [4..7]
  double min_scale = 0.65;  // in (0.3, 0.95)
  std::array<double, 3> rotation{0.0, 0.0, 0.0};  // Euler angles, radians
  std::uint64_t seed = 0;

  void validate() const;
};

// Per-frame shell scale: 1.0 at frame 1, raised-cosine down to min_scale at
// the systole frame, raised-cosine back up to min + 0.95 (1 - min) at frame
// 10. Frame 1 is the unique maximum.
double volume_scale(int frame1, const PhantomParams& params);

// Voxel = 1 iff its center lies inside the rotated outer ellipsoid at scale
// s(t) and outside the inner one (outer radii minus the wall, same scale).
// Radii and center receive a small constant-per-phantom seeded jitter.
VoxelModel4D generate_phantom(const PhantomParams& params);

// Randomized parameters at sensible desk-scale ranges for a given grid.
PhantomParams random_params(int grid_size, Rng& rng);

// Same integer shift and Z rotation (nearest-neighbor around the grid
// center) applied to every frame; zero fill at borders. voxels_lost, when
// requested, is occupied(in) - occupied(out): positive when clipping
// dominates, negative when resampling duplicates voxels.
VoxelModel4D augment(const VoxelModel4D& model, std::array<int, 3> shift, double z_rotation,
                     std::int64_t* voxels_lost = nullptr);

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  std::string subject_id;
  std::string split;  // train | val | test
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::map<std::string, int> counts() const;
  std::vector<const ManifestEntry*> split(const std::string& tag) const;

  void write(const std::string& path) const;
  static DatasetManifest read(const std::string& path);
  // unique subject ids; every file exists and parses as VOX4
  void validate(const std::string& base_dir) const;
};

struct BuildDatasetOptions {
  int n_subjects = 10;
  std::array<double, 3> split_fractions{0.6, 0.2, 0.2};  // train, val, test
  std::uint64_t seed = 0;
  int grid_size = 32;
  int augment_factor = 1;  // entries per training subject (1 = original only)
  int max_shift = 3;       // voxels, per axis
  double max_rotation = 15.0 * 3.14159265358979323846 / 180.0;
  bool rotation_quarter_turns = true;  // add a random multiple of 90 degrees
};

// Generates phantoms (seed = base seed + subject index), writes VOX4 files
// and "manifest.json" into output_dir, augmenting only the training split.
// Split sizes follow largest-remainder rounding of the fractions.
DatasetManifest build_dataset(const BuildDatasetOptions& opt, const std::string& output_dir);

// Largest-remainder split sizing, exposed for tests.
std::array<int, 3> split_sizes(int n, const std::array<double, 3>& fractions);

}  // namespace fnet
