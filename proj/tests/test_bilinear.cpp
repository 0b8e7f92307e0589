#include <algorithm>
#include <cstring>
#include <string>
#include <vector>

#include "bilinear.hpp"
#include "common.hpp"
#include "doctest.h"
#include "voxel.hpp"

using namespace fnet;

namespace {

VoxelModel4D random_binary(std::array<std::uint32_t, 4> dims, double density, Rng& rng) {
  VoxelModel4D m = VoxelModel4D::zeros(dims, VoxelKind::binary);
  for (float& v : m.data) v = rng.uniform() < density ? 1.0f : 0.0f;
  return m;
}

// Solid axis-aligned box [lo, hi] per axis, identical in every frame unless a
// single frame is requested.
void fill_box(VoxelModel4D& m, int lo, int hi, int only_frame1 = 0) {
  for (int t = 1; t <= m.frame_count(); ++t) {
    if (only_frame1 != 0 && t != only_frame1) continue;
    for (int z = lo; z <= hi; ++z)
      for (int y = lo; y <= hi; ++y)
        for (int x = lo; x <= hi; ++x)
          m.at(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y),
               static_cast<std::uint32_t>(z), static_cast<std::uint32_t>(t - 1)) = 1.0f;
  }
}

// Independent reference: evaluates the interpolation formula directly at
// every voxel, finding the bracketing inputs by linear scan and summing the
// neighborhood on the spot.
double ref_mean(const VoxelModel4D& lfr, int lframe1, int x, int y, int z, bool box) {
  const int X = static_cast<int>(lfr.dims[0]);
  const int Y = static_cast<int>(lfr.dims[1]);
  const int Z = static_cast<int>(lfr.dims[2]);
  double sum = 0.0;
  int taps = 0;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (!box && (std::abs(dx) + std::abs(dy) + std::abs(dz)) > 1) continue;
        ++taps;
        const int nx = x + dx, ny = y + dy, nz = z + dz;
        if (nx < 0 || nx >= X || ny < 0 || ny >= Y || nz < 0 || nz >= Z) continue;
        sum += lfr.at(static_cast<std::uint32_t>(nx), static_cast<std::uint32_t>(ny),
                      static_cast<std::uint32_t>(nz), static_cast<std::uint32_t>(lframe1 - 1));
      }
  return sum / taps;
}

VoxelModel4D ref_bilinear(const VoxelModel4D& lfr, const InterpolationTask& task,
                          const BilinearConfig& cfg) {
  const bool box = cfg.neighborhood == Neighborhood::box27;
  VoxelModel4D out = VoxelModel4D::zeros(
      {lfr.dims[0], lfr.dims[1], lfr.dims[2], static_cast<std::uint32_t>(task.total_frames)},
      VoxelKind::binary);
  for (int t = 1; t <= task.total_frames; ++t) {
    const auto it = std::find(task.input_frames.begin(), task.input_frames.end(), t);
    if (it != task.input_frames.end()) {
      const int li = static_cast<int>(it - task.input_frames.begin()) + 1;
      std::memcpy(out.frame(t), lfr.frame(li),
                  sizeof(float) * static_cast<std::size_t>(lfr.frame_size()));
      continue;
    }
    int before = -1, after = -1;
    for (std::size_t i = 0; i < task.input_frames.size(); ++i) {
      if (task.input_frames[i] < t) before = static_cast<int>(i);
      if (task.input_frames[i] > t && after < 0) after = static_cast<int>(i);
    }
    for (int z = 0; z < static_cast<int>(lfr.dims[2]); ++z)
      for (int y = 0; y < static_cast<int>(lfr.dims[1]); ++y)
        for (int x = 0; x < static_cast<int>(lfr.dims[0]); ++x) {
          double value = 0.0;
          if (before >= 0 && after >= 0) {
            const int ta = task.input_frames[static_cast<std::size_t>(before)];
            const int tb = task.input_frames[static_cast<std::size_t>(after)];
            value = (static_cast<double>(tb - t) / (tb - ta)) *
                        ref_mean(lfr, before + 1, x, y, z, box) +
                    (static_cast<double>(t - ta) / (tb - ta)) *
                        ref_mean(lfr, after + 1, x, y, z, box);
          } else if (before >= 0) {
            value = ref_mean(lfr, before + 1, x, y, z, box);
          } else {
            value = ref_mean(lfr, after + 1, x, y, z, box);
          }
          out.at(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y),
                 static_cast<std::uint32_t>(z), static_cast<std::uint32_t>(t - 1)) =
              value >= cfg.threshold ? 1.0f : 0.0f;
        }
  }
  return out;
}

}  // namespace

TEST_CASE("bilinear config validation") {
  CHECK_NOTHROW(BilinearConfig{}.validate());
  for (double bad : {0.0, 1.0, -0.1, 1.5}) {
    BilinearConfig cfg;
    cfg.threshold = bad;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgumentError);
  }
  CHECK(std::string(to_string(Neighborhood::six_connected)) == "six_connected");
  CHECK(std::string(to_string(Neighborhood::box27)) == "box27");
}

TEST_CASE("static solid blob reproduces every frame") {
  VoxelModel4D hfr = VoxelModel4D::zeros({10, 10, 10, 10}, VoxelKind::binary);
  fill_box(hfr, 2, 7);
  auto [lfr, task] = subsample_frames(hfr, 1);

  VoxelModel4D out = bilinear_interpolate(lfr, task, BilinearConfig{});
  REQUIRE(out.frame_count() == 10);
  for (int t = 1; t <= 10; ++t)
    CHECK(std::memcmp(out.frame(t), hfr.frame(t),
                      sizeof(float) * static_cast<std::size_t>(hfr.frame_size())) == 0);
}

TEST_CASE("midpoint blend weighs the bracketing frames equally") {
  // One voxel present only in the first input: the midpoint value is half
  // the neighborhood mean, 1/14 under six-connectivity.
  VoxelModel4D lfr = VoxelModel4D::zeros({9, 9, 9, 2}, VoxelKind::binary);
  lfr.at(4, 4, 4, 0) = 1.0f;
  InterpolationTask task;
  task.input_frames = {1, 3};
  task.target_frames = {2};
  task.total_frames = 3;

  BilinearConfig cfg;
  cfg.threshold = 1.0 / 14 - 1e-9;
  VoxelModel4D on = bilinear_interpolate(lfr, task, cfg);
  CHECK(on.occupied_count(2) == 7);  // the voxel and its six neighbors
  CHECK(on.at(4, 4, 4, 1) == 1.0f);

  cfg.threshold = 1.0 / 14 + 1e-9;
  VoxelModel4D off = bilinear_interpolate(lfr, task, cfg);
  CHECK(off.occupied_count(2) == 0);
}

TEST_CASE("disjoint neighborhoods leave the midpoint frame empty") {
  VoxelModel4D lfr = VoxelModel4D::zeros({12, 12, 12, 2}, VoxelKind::binary);
  lfr.at(2, 3, 3, 0) = 1.0f;
  lfr.at(6, 3, 3, 1) = 1.0f;  // moved +4 along X
  InterpolationTask task;
  task.input_frames = {1, 3};
  task.target_frames = {2};
  task.total_frames = 3;

  VoxelModel4D out = bilinear_interpolate(lfr, task, BilinearConfig{});
  CHECK(out.occupied_count(2) == 0);
  CHECK(out.occupied_count(1) == 1);
  CHECK(out.occupied_count(3) == 1);
}

TEST_CASE("frame past the last input uses that input alone") {
  VoxelModel4D hfr = VoxelModel4D::zeros({10, 10, 10, 10}, VoxelKind::binary);
  fill_box(hfr, 3, 6, 9);  // content only in frame 9, the last input
  auto [lfr, task] = subsample_frames(hfr, 1);

  VoxelModel4D out = bilinear_interpolate(lfr, task, BilinearConfig{});
  // Frame 10 is the smoothed, thresholded copy of frame 9; a solid box
  // survives six-connected smoothing exactly. Frame 8 blends frames 7
  // (empty) and 9: halving drops boundary voxels of the box below the
  // threshold, while the 2x2x2 interior (mean exactly 1) lands right on
  // 0.5 and stays occupied under the >= rule.
  CHECK(std::memcmp(out.frame(10), hfr.frame(9),
                    sizeof(float) * static_cast<std::size_t>(hfr.frame_size())) == 0);
  CHECK(out.occupied_count(8) == 8);
  for (std::uint32_t x = 4; x <= 5; ++x)
    for (std::uint32_t y = 4; y <= 5; ++y)
      for (std::uint32_t z = 4; z <= 5; ++z) CHECK(out.at(x, y, z, 7) == 1.0f);
}

TEST_CASE("box neighborhood spans the full 3x3x3 cube") {
  VoxelModel4D lfr = VoxelModel4D::zeros({9, 9, 9, 1}, VoxelKind::binary);
  lfr.at(4, 4, 4, 0) = 1.0f;
  InterpolationTask task;
  task.input_frames = {1};
  task.target_frames = {2};
  task.total_frames = 2;

  BilinearConfig cfg;
  cfg.neighborhood = Neighborhood::box27;
  cfg.threshold = 1.0 / 27 - 1e-9;
  VoxelModel4D out = bilinear_interpolate(lfr, task, cfg);
  CHECK(out.occupied_count(2) == 27);
  for (std::uint32_t z = 3; z <= 5; ++z)
    for (std::uint32_t y = 3; y <= 5; ++y)
      for (std::uint32_t x = 3; x <= 5; ++x) CHECK(out.at(x, y, z, 1) == 1.0f);
}

TEST_CASE("input frames pass through bit-exact") {
  Rng rng(21);
  VoxelModel4D hfr = random_binary({9, 9, 9, 10}, 0.4, rng);
  auto [lfr, task] = subsample_frames(hfr, 2);

  VoxelModel4D out = bilinear_interpolate(lfr, task, BilinearConfig{});
  for (int f : task.input_frames)
    CHECK(std::memcmp(out.frame(f), hfr.frame(f),
                      sizeof(float) * static_cast<std::size_t>(hfr.frame_size())) == 0);
}

TEST_CASE("matches a naive per-voxel reference") {
  Rng rng(77);
  for (std::uint32_t grid : {8u, 12u}) {
    for (int interval : {1, 2, 3}) {
      VoxelModel4D hfr = random_binary({grid, grid, grid, 10}, 0.35, rng);
      auto [lfr, task] = subsample_frames(hfr, interval);
      for (Neighborhood n : {Neighborhood::six_connected, Neighborhood::box27}) {
        for (double threshold : {0.3, 0.5}) {
          BilinearConfig cfg;
          cfg.neighborhood = n;
          cfg.threshold = threshold;
          VoxelModel4D got = bilinear_interpolate(lfr, task, cfg);
          VoxelModel4D want = ref_bilinear(lfr, task, cfg);
          REQUIRE(got.dims == want.dims);
          CHECK(got.data == want.data);
          VoxelModel4D again = bilinear_interpolate(lfr, task, cfg);
          CHECK(got.data == again.data);
        }
      }
    }
  }
}

TEST_CASE("rejects a model whose frame count disagrees with the task") {
  VoxelModel4D lfr = VoxelModel4D::zeros({6, 6, 6, 3}, VoxelKind::binary);
  InterpolationTask task;
  task.input_frames = {1, 3};
  task.target_frames = {2};
  task.total_frames = 3;
  CHECK_THROWS_AS(bilinear_interpolate(lfr, task, BilinearConfig{}), InvalidArgumentError);
}
