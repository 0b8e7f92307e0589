#pragma once

// Composite training loss: soft Dice between the predicted and reference
// volumes plus weighted KL terms between each latent level's posterior and
// its prior. Values are reduced in double regardless of the network dtype.

#include <array>
#include <vector>

#include "model.hpp"
#include "voxel.hpp"

namespace fnet {

struct LossWeights {
  double alpha = 1.0;
  std::array<double, 3> betas{0.001, 0.001, 0.01};

  void validate() const;  // all weights nonnegative
};

struct LossBreakdown {
  double dice_loss = 0.0;
  std::array<double, 3> kl{0.0, 0.0, 0.0};  // kl[i] is level i+1, bottom to top
  double total = 0.0;
};

// Smoothing constant shared by the loss here and the graph-side soft Dice.
inline constexpr double kDiceEps = 1.0;

// Soft Dice loss over every voxel of every frame:
//   1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps)
// pred may be probabilistic, target is typically binary; dims must match.
double dice_loss(const VoxelModel4D& pred, const VoxelModel4D& target);

// KL(N(mu_q, e^lv_q) || N(mu_p, e^lv_p)) for diagonal Gaussians, summed over
// dimensions. All four vectors must share a length; inputs must be finite.
double kl_gaussian(const std::vector<double>& mu_q, const std::vector<double>& logvar_q,
                   const std::vector<double>& mu_p, const std::vector<double>& logvar_p);
double kl_gaussian(const std::vector<float>& mu_q, const std::vector<float>& logvar_q,
                   const std::vector<float>& mu_p, const std::vector<float>& logvar_p);

// Assembles the full breakdown. The top level's prior is the standard
// Gaussian by construction (its stored prior stats are zero), so every KL is
// taken directly between the recorded posterior and prior.
LossBreakdown total_loss(const VoxelModel4D& pred, const VoxelModel4D& target,
                         const LatentState& latents, const LossWeights& w);

}  // namespace fnet
