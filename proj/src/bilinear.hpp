#pragma once

// Classical frame interpolation baseline: neighborhood-smoothed occupancy of
// the two nearest input frames, blended with inverse-temporal-distance
// weights and thresholded back to a binary model.

#include "voxel.hpp"

namespace fnet {

enum class Neighborhood { six_connected, box27 };

const char* to_string(Neighborhood n);

struct BilinearConfig {
  Neighborhood neighborhood = Neighborhood::six_connected;
  double threshold = 0.5;

  void validate() const;  // threshold strictly inside (0, 1)
};

// Reconstructs the full cycle from an LFR model whose frames correspond to
// task.input_frames. Input frames are copied through unchanged; each
// estimated frame blends the smoothed occupancies of its surrounding input
// frames; a frame outside the covered range uses the nearest input alone.
VoxelModel4D bilinear_interpolate(const VoxelModel4D& lfr, const InterpolationTask& task,
                                  const BilinearConfig& cfg = {});

}  // namespace fnet
