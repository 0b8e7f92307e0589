#pragma once

// Adam training loop for the interpolation network: stepped learning-rate
// decay, per-epoch validation Dice on the estimated frames, early stopping on
// that score, and a per-epoch history suitable for CSV export.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "loss.hpp"
#include "model.hpp"
#include "phantom.hpp"

namespace fnet {

struct TrainConfig {
  int batch_size = 10;
  int max_epochs = 500;
  double initial_lr = 1e-3;
  double lr_decay_factor = 0.5;
  int lr_decay_every = 30;        // epochs per decay step
  int early_stop_patience = 50;   // epochs without val improvement before stopping
  std::uint64_t seed = 0;

  void validate() const;
};

// initial_lr * decay_factor^(epoch / decay_every), integer division; epochs
// count from 0.
double lr_at(const TrainConfig& tc, int epoch);

struct EpochStats {
  int epoch = 0;  // 0-based
  double lr = 0.0;
  double dice_loss = 0.0;  // means over the epoch's training samples
  double kl1 = 0.0;
  double kl2 = 0.0;
  double kl3 = 0.0;
  double total = 0.0;
  double val_dice = 0.0;  // mean Dice on estimated frames, binarized at 0.5
};

struct TrainResult {
  NetworkParams best;         // parameters from the best validation epoch
  int best_epoch = -1;        // 0-based
  double best_val_dice = 0.0;
  std::vector<EpochStats> history;
};

std::string history_csv(const std::vector<EpochStats>& history);
void write_history_csv(const std::vector<EpochStats>& history, const std::string& path);

// Trains on the manifest's train split and validates on its val split; entry
// paths are resolved against base_dir. Training pairs are (subsampled LFR
// input, full HFR target) per subject. on_epoch, when set, observes each
// epoch's stats as they are recorded.
TrainResult train(const ArchConfig& arch, const TrainConfig& tc, const LossWeights& w,
                  const DatasetManifest& manifest, const std::string& base_dir, int interval,
                  const std::function<void(const EpochStats&)>& on_epoch = nullptr);

// Convenience: reads <dataset_dir>/manifest.json first.
TrainResult train(const ArchConfig& arch, const TrainConfig& tc, const LossWeights& w,
                  const std::string& dataset_dir, int interval,
                  const std::function<void(const EpochStats&)>& on_epoch = nullptr);

}  // namespace fnet
