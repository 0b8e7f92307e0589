#include "config.hpp"

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "json.hpp"

namespace fnet {

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys,
                    const char* where) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : keys) known = known || item.key() == k;
    if (!known) throw FormatError(std::string(where) + " has unknown key: " + item.key());
  }
}

const nlohmann::json* section(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) return nullptr;
  if (!it->is_object()) throw FormatError(std::string("run config key ") + key + " must be an object");
  return &*it;
}

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it != j.end()) out = it->template get<T>();
}

ArchConfig parse_arch(const nlohmann::json& j) {
  reject_unknown(j,
                 {"grid_size", "input_frames", "output_frames", "depth", "base_channels",
                  "latent_dims", "variant"},
                 "arch config");
  ArchConfig cfg;
  maybe(j, "grid_size", cfg.grid_size);
  maybe(j, "input_frames", cfg.input_frames);
  maybe(j, "output_frames", cfg.output_frames);
  maybe(j, "depth", cfg.depth);
  maybe(j, "base_channels", cfg.base_channels);
  maybe(j, "latent_dims", cfg.latent_dims);
  if (auto it = j.find("variant"); it != j.end())
    cfg.variant = variant_from_string(it->get<std::string>());
  return cfg;
}

TrainConfig parse_train(const nlohmann::json& j) {
  reject_unknown(j,
                 {"batch_size", "max_epochs", "initial_lr", "lr_decay_factor", "lr_decay_every",
                  "early_stop_patience"},
                 "train config");
  TrainConfig tc;
  maybe(j, "batch_size", tc.batch_size);
  maybe(j, "max_epochs", tc.max_epochs);
  maybe(j, "initial_lr", tc.initial_lr);
  maybe(j, "lr_decay_factor", tc.lr_decay_factor);
  maybe(j, "lr_decay_every", tc.lr_decay_every);
  maybe(j, "early_stop_patience", tc.early_stop_patience);
  return tc;
}

LossWeights parse_loss(const nlohmann::json& j) {
  reject_unknown(j, {"alpha", "betas"}, "loss config");
  LossWeights w;
  maybe(j, "alpha", w.alpha);
  maybe(j, "betas", w.betas);
  return w;
}

BuildDatasetOptions parse_dataset(const nlohmann::json& j) {
  reject_unknown(j,
                 {"n_subjects", "split_fractions", "grid_size", "augment_factor", "max_shift",
                  "max_rotation", "rotation_quarter_turns"},
                 "dataset config");
  BuildDatasetOptions opt;
  maybe(j, "n_subjects", opt.n_subjects);
  maybe(j, "split_fractions", opt.split_fractions);
  maybe(j, "grid_size", opt.grid_size);
  maybe(j, "augment_factor", opt.augment_factor);
  maybe(j, "max_shift", opt.max_shift);
  maybe(j, "max_rotation", opt.max_rotation);
  maybe(j, "rotation_quarter_turns", opt.rotation_quarter_turns);
  return opt;
}

}  // namespace

void RunConfig::validate(bool require_paths) const {
  arch.validate();
  train.validate();
  loss.validate();
  if (interval < 1 || interval > 3)
    throw InvalidArgumentError("interval must be 1, 2, or 3, got " + std::to_string(interval));
  if (folds < 2) throw InvalidArgumentError("folds must be at least 2, got " + std::to_string(folds));
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw InvalidArgumentError("val_fraction must lie in [0, 1)");
  if (threads < 0) throw InvalidArgumentError("threads must be nonnegative");
  if (data_dir.empty() || out_dir.empty())
    throw InvalidArgumentError("data_dir and out_dir must be set");
  if (require_paths && !std::filesystem::exists(data_dir))
    throw IoError("data_dir does not exist: " + data_dir);
}

std::uint64_t derive_seed(std::uint64_t root, const std::string& name) {
  return splitmix64(root ^ fnv1a64(name));
}

void wire_seeds(RunConfig& rc) {
  rc.train.seed = rc.seed;
  rc.dataset.seed = derive_seed(rc.seed, "dataset");
}

RunConfig parse_run_config(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("run config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("run config must be a JSON object");
  reject_unknown(j,
                 {"seed", "interval", "folds", "val_fraction", "threads", "data_dir", "out_dir",
                  "arch", "train", "loss", "dataset"},
                 "run config");
  RunConfig rc;
  try {
    maybe(j, "seed", rc.seed);
    maybe(j, "interval", rc.interval);
    maybe(j, "folds", rc.folds);
    maybe(j, "val_fraction", rc.val_fraction);
    maybe(j, "threads", rc.threads);
    maybe(j, "data_dir", rc.data_dir);
    maybe(j, "out_dir", rc.out_dir);
    if (const nlohmann::json* s = section(j, "arch")) rc.arch = parse_arch(*s);
    if (const nlohmann::json* s = section(j, "train")) rc.train = parse_train(*s);
    if (const nlohmann::json* s = section(j, "loss")) rc.loss = parse_loss(*s);
    if (const nlohmann::json* s = section(j, "dataset")) rc.dataset = parse_dataset(*s);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("run config field error: ") + e.what());
  }
  return rc;
}

RunConfig read_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open run config: " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

std::string run_config_json(const RunConfig& rc) {
  nlohmann::json j;
  j["seed"] = rc.seed;
  j["interval"] = rc.interval;
  j["folds"] = rc.folds;
  j["val_fraction"] = rc.val_fraction;
  j["threads"] = rc.threads;
  j["data_dir"] = rc.data_dir;
  j["out_dir"] = rc.out_dir;
  j["arch"] = {{"grid_size", rc.arch.grid_size},
               {"input_frames", rc.arch.input_frames},
               {"output_frames", rc.arch.output_frames},
               {"depth", rc.arch.depth},
               {"base_channels", rc.arch.base_channels},
               {"latent_dims", rc.arch.latent_dims},
               {"variant", to_string(rc.arch.variant)}};
  j["train"] = {{"batch_size", rc.train.batch_size},
                {"max_epochs", rc.train.max_epochs},
                {"initial_lr", rc.train.initial_lr},
                {"lr_decay_factor", rc.train.lr_decay_factor},
                {"lr_decay_every", rc.train.lr_decay_every},
                {"early_stop_patience", rc.train.early_stop_patience}};
  j["loss"] = {{"alpha", rc.loss.alpha}, {"betas", rc.loss.betas}};
  j["dataset"] = {{"n_subjects", rc.dataset.n_subjects},
                  {"split_fractions", rc.dataset.split_fractions},
                  {"grid_size", rc.dataset.grid_size},
                  {"augment_factor", rc.dataset.augment_factor},
                  {"max_shift", rc.dataset.max_shift},
                  {"max_rotation", rc.dataset.max_rotation},
                  {"rotation_quarter_turns", rc.dataset.rotation_quarter_turns}};
  return j.dump(2) + "\n";
}

std::uint64_t config_hash(const RunConfig& rc) {
  const std::string text = run_config_json(rc);
  return fnv1a64(text.data(), text.size());
}

}  // namespace fnet
