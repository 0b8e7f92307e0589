#pragma once

// 4D voxel heart models: dense occupancy grids over (X, Y, Z, T), frame
// subsampling into low-frame-rate inputs, axis transposition, the Dice
// overlap metric, and the VOX4 on-disk format.
//
// Conventions used throughout the project:
//   * canonical memory order is x fastest, then y, z, t
//   * frame indices are 1-based at every API boundary; frame 1 is
//     end-diastole (the largest heart shape of the cycle)

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "common.hpp"

namespace fnet {

enum class VoxelKind : std::uint8_t { binary = 0, probabilistic = 1 };

struct VoxelModel4D {
  std::array<std::uint32_t, 4> dims{0, 0, 0, 0};  // X, Y, Z, T
  VoxelKind kind = VoxelKind::binary;
  std::vector<float> data;  // length X*Y*Z*T, canonical order

  static VoxelModel4D zeros(std::array<std::uint32_t, 4> dims, VoxelKind kind);

  std::int64_t size() const {
    return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2] * dims[3];
  }
  std::int64_t frame_size() const {
    return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
  }
  int frame_count() const { return static_cast<int>(dims[3]); }

  std::int64_t index(std::uint32_t x, std::uint32_t y, std::uint32_t z, std::uint32_t t) const {
    return static_cast<std::int64_t>(x) +
           static_cast<std::int64_t>(dims[0]) *
               (y + static_cast<std::int64_t>(dims[1]) * (z + static_cast<std::int64_t>(dims[2]) * t));
  }
  float at(std::uint32_t x, std::uint32_t y, std::uint32_t z, std::uint32_t t) const {
    return data[index(x, y, z, t)];
  }
  float& at(std::uint32_t x, std::uint32_t y, std::uint32_t z, std::uint32_t t) {
    return data[index(x, y, z, t)];
  }

  // Pointer to the start of a frame, 1-based frame index.
  const float* frame(int frame1) const { return data.data() + frame_size() * (frame1 - 1); }
  float* frame(int frame1) { return data.data() + frame_size() * (frame1 - 1); }

  std::int64_t occupied_count(int frame1) const;  // voxels > 0.5 in one frame
  std::int64_t occupied_count() const;            // over the whole model

  // Enforces the type invariants (payload length, value ranges for the kind).
  void validate() const;
};

// Frames kept as network input vs. frames the network must estimate.
// input_frames always contains frame 1; the two lists partition 1..total_frames.
struct InterpolationTask {
  std::vector<int> input_frames;   // sorted, 1-based
  std::vector<int> target_frames;  // sorted, 1-based
  int total_frames = 0;

  void validate() const;
};

// Permutation over the canonical axis order (X, Y, Z, T). New axis i carries
// what old axis perm[i] held.
struct AxisPermutation {
  std::array<int, 4> perm{0, 1, 2, 3};

  AxisPermutation inverse() const;
  void validate() const;
};

// Drops frames from an HFR model, keeping frame 1 and then every
// (interval+1)-th frame; the complement becomes the estimation targets.
// interval=1 on T=10 keeps the odd frames {1,3,5,7,9}.
std::pair<VoxelModel4D, InterpolationTask> subsample_frames(const VoxelModel4D& model,
                                                            int interval);

VoxelModel4D transpose(const VoxelModel4D& model, const AxisPermutation& p);

// 2|A∩B| / (|A|+|B|) over binary occupancy. Both-empty is defined as 1.0.
double dice_coefficient(const VoxelModel4D& a, const VoxelModel4D& b);
double dice_frames(const VoxelModel4D& a, int frame_a, const VoxelModel4D& b, int frame_b);

// Binarize a probabilistic model at a threshold (value >= threshold -> 1).
VoxelModel4D binarize(const VoxelModel4D& m, float threshold = 0.5f);

// Count of voxels whose binarized values disagree (difference-image size).
std::int64_t mismatch_count(const VoxelModel4D& a, int frame_a, const VoxelModel4D& b,
                            int frame_b);

// --------------------------------------------------------------------------
// VOX4 file format, version 1 (little-endian, bit-exact):
//   bytes 0-3   magic "VOX4"
//   byte  4     version = 1
//   byte  5     kind: 0 = binary (u8 payload), 1 = probabilistic (f32 payload)
//   bytes 6-7   reserved, zero
//   bytes 8-23  four u32 dims (X, Y, Z, T)
//   payload     X*Y*Z*T values in canonical order
// A sidecar "<stem>.meta.json" may carry free-form provenance; it is optional
// and ignored by the reader.
// --------------------------------------------------------------------------

VoxelModel4D read_vox4(const std::string& path);
void write_vox4(const VoxelModel4D& model, const std::string& path);

// In-memory codec used by both the file I/O and the tests.
std::vector<unsigned char> encode_vox4(const VoxelModel4D& model);
VoxelModel4D decode_vox4(const unsigned char* bytes, std::size_t n);

}  // namespace fnet
