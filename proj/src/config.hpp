#pragma once

// Single-file JSON run configuration: every knob of the pipeline in one
// document, with a canonical rendering whose hash ties reports back to the
// exact settings that produced them.

#include <cstdint>
#include <string>

#include "loss.hpp"
#include "model.hpp"
#include "phantom.hpp"
#include "train.hpp"

namespace fnet {

struct RunConfig {
  ArchConfig arch;
  TrainConfig train;
  LossWeights loss;
  BuildDatasetOptions dataset;
  int interval = 1;
  int folds = 3;
  double val_fraction = 0.2;  // of all subjects, handed to the fold planner
  std::uint64_t seed = 0;     // root; component streams are derived from it
  int threads = 0;            // 0 = all logical cores
  std::string data_dir = "data";
  std::string out_dir = "out";

  // Range checks plus sub-config validation. require_paths additionally
  // demands that data_dir exists (out_dir is created on demand).
  void validate(bool require_paths = false) const;
};

// splitmix64(root ^ fnv1a64(name)): one root seed fans out by component name.
std::uint64_t derive_seed(std::uint64_t root, const std::string& name);

// Overwrites the component seeds from the root. The trainer receives the
// root itself (its init and sampler streams branch off internally by name);
// dataset generation gets the "dataset" substream. Fold planning should use
// derive_seed(seed, "folds") at the call site.
void wire_seeds(RunConfig& rc);

// Missing keys keep their defaults; unknown keys are errors, at every level.
// Component seeds are derived state: they are neither read nor written, so
// call wire_seeds after parsing (and after any flag overrides).
RunConfig parse_run_config(const std::string& json_text);
RunConfig read_run_config(const std::string& path);

// Canonical rendering: sorted keys, two-space indent, trailing newline.
// parse_run_config inverts it.
std::string run_config_json(const RunConfig& rc);

// FNV-1a64 of the canonical rendering.
std::uint64_t config_hash(const RunConfig& rc);

}  // namespace fnet
