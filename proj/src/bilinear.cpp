#include "bilinear.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <string>
#include <vector>

#include "common.hpp"

namespace fnet {

const char* to_string(Neighborhood n) {
  switch (n) {
    case Neighborhood::six_connected:
      return "six_connected";
    case Neighborhood::box27:
      return "box27";
  }
  throw InvalidArgumentError("unknown neighborhood");
}

void BilinearConfig::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw InvalidArgumentError("bilinear threshold must lie strictly inside (0, 1), got " +
                               std::to_string(threshold));
}

namespace {

std::vector<std::array<int, 3>> neighborhood_offsets(Neighborhood n) {
  if (n == Neighborhood::six_connected)
    return {{{0, 0, 0}},  {{1, 0, 0}}, {{-1, 0, 0}}, {{0, 1, 0}},
            {{0, -1, 0}}, {{0, 0, 1}}, {{0, 0, -1}}};
  std::vector<std::array<int, 3>> offs;
  offs.reserve(27);
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) offs.push_back({dx, dy, dz});
  return offs;
}

// Mean occupancy around every voxel of one LFR frame; voxels outside the
// grid count as empty but stay in the denominator.
std::vector<double> smoothed_frame(const VoxelModel4D& lfr, int lfr_frame1,
                                   const std::vector<std::array<int, 3>>& offs) {
  const int X = static_cast<int>(lfr.dims[0]);
  const int Y = static_cast<int>(lfr.dims[1]);
  const int Z = static_cast<int>(lfr.dims[2]);
  std::vector<double> out(static_cast<std::size_t>(lfr.frame_size()), 0.0);
  const double denom = static_cast<double>(offs.size());
  std::size_t i = 0;
  for (int z = 0; z < Z; ++z)
    for (int y = 0; y < Y; ++y)
      for (int x = 0; x < X; ++x, ++i) {
        double sum = 0.0;
        for (const auto& d : offs) {
          const int nx = x + d[0], ny = y + d[1], nz = z + d[2];
          if (nx < 0 || nx >= X || ny < 0 || ny >= Y || nz < 0 || nz >= Z) continue;
          sum += lfr.at(static_cast<std::uint32_t>(nx), static_cast<std::uint32_t>(ny),
                        static_cast<std::uint32_t>(nz), static_cast<std::uint32_t>(lfr_frame1 - 1));
        }
        out[i] = sum / denom;
      }
  return out;
}

}  // namespace

VoxelModel4D bilinear_interpolate(const VoxelModel4D& lfr, const InterpolationTask& task,
                                  const BilinearConfig& cfg) {
  cfg.validate();
  task.validate();
  if (lfr.frame_count() != static_cast<int>(task.input_frames.size()))
    throw InvalidArgumentError("bilinear_interpolate: model has " +
                               std::to_string(lfr.frame_count()) + " frames but the task lists " +
                               std::to_string(task.input_frames.size()) + " input frames");

  VoxelModel4D out = VoxelModel4D::zeros(
      {lfr.dims[0], lfr.dims[1], lfr.dims[2], static_cast<std::uint32_t>(task.total_frames)},
      VoxelKind::binary);

  const std::int64_t fsize = lfr.frame_size();
  for (std::size_t i = 0; i < task.input_frames.size(); ++i)
    std::memcpy(out.frame(task.input_frames[i]), lfr.frame(static_cast<int>(i) + 1),
                sizeof(float) * static_cast<std::size_t>(fsize));

  const auto offs = neighborhood_offsets(cfg.neighborhood);
  std::vector<std::vector<double>> smooth(task.input_frames.size());
  auto smooth_for = [&](std::size_t input_idx) -> const std::vector<double>& {
    auto& s = smooth[input_idx];
    if (s.empty()) s = smoothed_frame(lfr, static_cast<int>(input_idx) + 1, offs);
    return s;
  };

  for (int t : task.target_frames) {
    // First input past t; everything before begin() or at end() means t lies
    // outside the covered range and the nearest input serves alone.
    const auto after =
        std::upper_bound(task.input_frames.begin(), task.input_frames.end(), t);
    float* dst = out.frame(t);
    if (after == task.input_frames.begin() || after == task.input_frames.end()) {
      const std::size_t idx = after == task.input_frames.begin()
                                  ? 0
                                  : task.input_frames.size() - 1;
      const std::vector<double>& s = smooth_for(idx);
      for (std::int64_t v = 0; v < fsize; ++v)
        dst[v] = s[static_cast<std::size_t>(v)] >= cfg.threshold ? 1.0f : 0.0f;
      continue;
    }
    const std::size_t ib = static_cast<std::size_t>(after - task.input_frames.begin());
    const std::size_t ia = ib - 1;
    const int ta = task.input_frames[ia], tb = task.input_frames[ib];
    const double wa = static_cast<double>(tb - t) / static_cast<double>(tb - ta);
    const double wb = static_cast<double>(t - ta) / static_cast<double>(tb - ta);
    const std::vector<double>& sa = smooth_for(ia);
    const std::vector<double>& sb = smooth_for(ib);
    for (std::int64_t v = 0; v < fsize; ++v) {
      const double value = wa * sa[static_cast<std::size_t>(v)] + wb * sb[static_cast<std::size_t>(v)];
      dst[v] = value >= cfg.threshold ? 1.0f : 0.0f;
    }
  }
  return out;
}

}  // namespace fnet
