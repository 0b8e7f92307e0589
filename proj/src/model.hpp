#pragma once

// The frame-interpolation network: a spatial encoder, three spatiotemporal
// encoders, per-level fusion blocks, a three-level ladder VAE bottleneck, and
// a skip-connected decoder that emits per-voxel occupancy probabilities for
// all output frames.
//
// Feature tensors are rank 4 in [channels, X, Y, Z] layout; the network input
// packs the low-frame-rate frames into the channel axis. Spatiotemporal
// encoders work in transposed layouts where one spatial axis plays the
// channel role; their per-level outputs are mapped back onto the canonical
// grid so all four encoders agree on shape before fusion.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "common.hpp"
#include "tensor.hpp"
#include "voxel.hpp"

namespace fnet {

enum class Variant { full, no_skip, no_residual, no_st_encoders, baseline };

const char* to_string(Variant v);
Variant variant_from_string(const std::string& name);
const std::vector<Variant>& all_variants();

struct ArchConfig {
  int grid_size = 32;
  int input_frames = 5;
  int output_frames = 10;
  int depth = 4;
  int base_channels = 8;
  std::array<int, 3> latent_dims{64, 48, 32};  // level 1 (bottom) .. level 3 (top)
  Variant variant = Variant::full;

  void validate() const;

  // level is 1-based, 1..depth
  int level_channels(int level) const { return base_channels << (level - 1); }
  int level_extent(int level) const { return grid_size >> level; }
  std::int64_t deepest_flat_size() const {
    std::int64_t e = level_extent(depth);
    return static_cast<std::int64_t>(level_channels(depth)) * e * e * e;
  }

  bool has_st_encoders() const;    // three spatiotemporal paths present
  bool has_decoder_skips() const;  // decoder concatenates per-level features
  bool has_residual_skip() const;  // encoder blocks carry the parallel conv path

  std::string to_json() const;
  static ArchConfig from_json(const std::string& text);
};

template <typename T>
using ParamMap = std::map<std::string, Tensor<T>>;

struct NetworkParams {
  ArchConfig arch;
  ParamMap<float> tensors;
};

// Every parameter path the config's forward pass consumes, with its shape.
// Conv weights are [C_out, C_in, k0, k1, k2]; dense weights are [out, in].
std::map<std::string, std::vector<int>> declare_params(const ArchConfig& cfg);

// Zero-filled parameter skeleton (paths and shapes only).
NetworkParams make_variant(const ArchConfig& cfg);

// He-normal weights, zero biases, drawn from the "init" substream of seed.
NetworkParams init_params(const ArchConfig& cfg, std::uint64_t seed);

std::int64_t param_count(const ArchConfig& cfg);

template <typename T>
struct LatentLevel {
  std::vector<T> post_mu, post_logvar;
  std::vector<T> prior_mu, prior_logvar;
  std::vector<T> z;
};

template <typename T>
struct LatentStateT {
  std::array<LatentLevel<T>, 3> levels;  // [0] = level 1 (bottom) .. [2] = level 3 (top)
};

using LatentState = LatentStateT<float>;

// Node ids of everything a caller may want to inspect or attach a loss to.
// Vectors indexed by level-1 hold -1 where the variant skips the computation.
template <typename T>
struct NetworkBuild {
  int input = -1;   // [F_l, D, D, D]
  int output = -1;  // [F_h, D, D, D], strictly inside (0,1)

  std::vector<int> spatial;  // aligned per-level features
  std::vector<int> st_xy, st_yz, st_zx;
  std::vector<int> fuse_gate;  // sigmoid weight maps
  std::vector<int> fused;

  std::array<int, 3> post_mu{-1, -1, -1};
  std::array<int, 3> post_logvar{-1, -1, -1};
  std::array<int, 3> prior_mu{-1, -1, -1};
  std::array<int, 3> prior_logvar{-1, -1, -1};
  std::array<int, 3> z{-1, -1, -1};

  std::map<std::string, int> param_nodes;
  std::map<std::string, int> taps;  // named decoder intermediates, for probes
  int st_block_calls = 0;  // spatiotemporal residual blocks evaluated

  LatentStateT<T> latents(const Graph<T>& g) const;
};

// Builds the forward pass on the graph. train_mode samples the latents with
// sampler (required then); infer mode uses posterior means. The input node is
// created from `input` and exposed via NetworkBuild::input.
template <typename T>
NetworkBuild<T> build_forward(Graph<T>& g, const ArchConfig& cfg, const ParamMap<T>& params,
                              const Tensor<T>& input, bool train_mode, Rng* sampler,
                              bool params_need_grad);

// Canonical voxel model (X,Y,Z,T) <-> network tensor [T, X, Y, Z].
template <typename T>
Tensor<T> frames_to_tensor(const VoxelModel4D& m);
template <typename T>
VoxelModel4D tensor_to_model(const Tensor<T>& t, VoxelKind kind);

// Deterministic mean-path reconstruction of the full cycle from an LFR model.
VoxelModel4D infer(const NetworkParams& net, const VoxelModel4D& lfr,
                   LatentState* latents = nullptr);

}  // namespace fnet
