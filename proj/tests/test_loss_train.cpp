#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "loss.hpp"
#include "phantom.hpp"
#include "train.hpp"

using namespace fnet;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("losstrain_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

ArchConfig tiny_config() {
  ArchConfig cfg;
  cfg.grid_size = 8;
  cfg.input_frames = 5;
  cfg.output_frames = 10;
  cfg.depth = 2;
  cfg.base_channels = 2;
  cfg.latent_dims = {8, 6, 4};
  cfg.variant = Variant::full;
  return cfg;
}

VoxelModel4D random_binary(std::array<std::uint32_t, 4> dims, std::uint64_t seed,
                           double fill = 0.4) {
  VoxelModel4D m = VoxelModel4D::zeros(dims, VoxelKind::binary);
  Rng rng(seed);
  for (float& v : m.data) v = rng.uniform() < fill ? 1.0f : 0.0f;
  return m;
}

VoxelModel4D random_prob(std::array<std::uint32_t, 4> dims, std::uint64_t seed) {
  VoxelModel4D m = VoxelModel4D::zeros(dims, VoxelKind::probabilistic);
  Rng rng(seed);
  for (float& v : m.data) v = static_cast<float>(rng.uniform());
  return m;
}

// One latent level whose KL against its prior is exactly 10:
// mean shifts of 4 and 2 at unit variance give 8 + 2.
LatentLevel<float> kl_ten_level() {
  LatentLevel<float> lv;
  lv.post_mu = {-2.0f, -1.0f};
  lv.post_logvar = {0.0f, 0.0f};
  lv.prior_mu = {2.0f, 1.0f};
  lv.prior_logvar = {0.0f, 0.0f};
  return lv;
}

// Direct log-density ratio Monte-Carlo estimate of KL(q || p), z ~ q.
double kl_monte_carlo(const std::vector<double>& mu_q, const std::vector<double>& lv_q,
                      const std::vector<double>& mu_p, const std::vector<double>& lv_p,
                      int n_samples, Rng& rng) {
  double sum = 0.0;
  for (int s = 0; s < n_samples; ++s) {
    double ratio = 0.0;
    for (std::size_t i = 0; i < mu_q.size(); ++i) {
      const double z = mu_q[i] + std::exp(0.5 * lv_q[i]) * rng.normal();
      const double dq = z - mu_q[i], dp = z - mu_p[i];
      ratio += 0.5 * (lv_p[i] + dp * dp / std::exp(lv_p[i])) -
               0.5 * (lv_q[i] + dq * dq / std::exp(lv_q[i]));
    }
    sum += ratio;
  }
  return sum / n_samples;
}

}  // namespace

TEST_CASE("loss weights reject negatives") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.alpha = -0.1;
  CHECK_THROWS_AS(w.validate(), InvalidArgumentError);
  w = LossWeights{};
  w.betas[1] = -1e-9;
  CHECK_THROWS_AS(w.validate(), InvalidArgumentError);
}

TEST_CASE("dice loss formula on constructed volumes") {
  // Perfect prediction of a 100-voxel object: 1 - 201/201 = 0.
  VoxelModel4D target = VoxelModel4D::zeros({10, 10, 10, 1}, VoxelKind::binary);
  for (int i = 0; i < 100; ++i) target.data[static_cast<std::size_t>(i * 7 % 1000)] = 1.0f;
  REQUIRE(target.occupied_count() == 100);
  CHECK(dice_loss(target, target) == doctest::Approx(0.0).epsilon(5e-3));
  CHECK(std::abs(dice_loss(target, target)) < 1e-12);

  // Perfectly inverted prediction: numerator collapses to the smoothing term.
  VoxelModel4D inverted = target;
  inverted.kind = VoxelKind::probabilistic;
  for (float& v : inverted.data) v = 1.0f - v;
  CHECK(dice_loss(inverted, target) == doctest::Approx(1.0 - 1.0 / 1001.0).epsilon(1e-12));

  VoxelModel4D other = VoxelModel4D::zeros({10, 10, 9, 1}, VoxelKind::binary);
  CHECK_THROWS_AS(dice_loss(other, target), DimensionError);
}

TEST_CASE("dice loss stays inside the unit interval") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    VoxelModel4D pred = random_prob({6, 5, 4, 3}, 100 + seed);
    VoxelModel4D target = random_binary({6, 5, 4, 3}, 200 + seed, 0.1 * static_cast<double>(seed));
    const double dl = dice_loss(pred, target);
    CHECK(dl >= 0.0);
    CHECK(dl <= 1.0);
  }
}

TEST_CASE("dice loss agrees with the graph-side soft dice") {
  VoxelModel4D pred = random_prob({5, 6, 4, 2}, 9);
  VoxelModel4D target = random_binary({5, 6, 4, 2}, 10);
  Graph<float> g;
  const int dl = g.soft_dice_loss(g.leaf(frames_to_tensor<float>(pred)),
                                  g.leaf(frames_to_tensor<float>(target)), 1.0f);
  CHECK(dice_loss(pred, target) == doctest::Approx(g.scalar(dl)).epsilon(1e-6));
}

TEST_CASE("dice loss gradient matches finite differences") {
  Rng rng(31);
  Tensor<double> pred({2, 4, 4, 4});
  for (double& v : pred.data) v = rng.uniform(0.05, 0.95);
  Tensor<double> target({2, 4, 4, 4});
  for (double& v : target.data) v = rng.uniform() < 0.4 ? 1.0 : 0.0;

  auto f = [&](const ParamStoreD& p, GradMapD* grads) {
    Graph<double> g;
    const int pr = g.leaf(p.at("pred"), grads != nullptr);
    const int dl = g.soft_dice_loss(pr, g.leaf(target), 1.0);
    if (grads) {
      g.backward(dl);
      (*grads)["pred"] = g.grad(pr);
    }
    return g.scalar(dl);
  };
  GradCheckReport report = grad_check(f, {{"pred", pred}}, 1e-5);
  CHECK(report.coords_checked == 128);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("kl gaussian closed-form values") {
  // Identical distributions.
  std::vector<double> mu{0.3, -1.2, 4.0};
  std::vector<double> lv{0.1, -0.4, 1.0};
  CHECK(kl_gaussian(mu, lv, mu, lv) == 0.0);

  // Unit mean shift against the standard normal in one dimension.
  const std::vector<double> one{1.0}, zero{0.0};
  CHECK(kl_gaussian(one, zero, zero, zero) == 0.5);

  // The float overload reduces in double and agrees on exact cases.
  const std::vector<float> onef{1.0f}, zerof{0.0f};
  CHECK(kl_gaussian(onef, zerof, zerof, zerof) == 0.5);

  CHECK_THROWS_AS(kl_gaussian(mu, lv, mu, std::vector<double>{0.1, -0.4}), DimensionError);
  std::vector<double> bad{0.3, std::numeric_limits<double>::infinity(), 4.0};
  CHECK_THROWS_AS(kl_gaussian(bad, lv, mu, lv), NumericError);
  bad[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(kl_gaussian(mu, lv, bad, lv), NumericError);
}

TEST_CASE("kl gaussian is nonnegative on random inputs") {
  Rng rng(55);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> mq(5), lq(5), mp(5), lp(5);
    for (int i = 0; i < 5; ++i) {
      mq[static_cast<std::size_t>(i)] = rng.uniform(-3.0, 3.0);
      lq[static_cast<std::size_t>(i)] = rng.uniform(-2.0, 2.0);
      mp[static_cast<std::size_t>(i)] = rng.uniform(-3.0, 3.0);
      lp[static_cast<std::size_t>(i)] = rng.uniform(-2.0, 2.0);
    }
    CHECK(kl_gaussian(mq, lq, mp, lp) >= -1e-12);
  }
}

TEST_CASE("kl gaussian matches a monte-carlo estimate") {
  Rng prng(71);
  for (int rep = 0; rep < 3; ++rep) {
    std::vector<double> mq(6), lq(6), mp(6), lp(6);
    for (int i = 0; i < 6; ++i) {
      mq[static_cast<std::size_t>(i)] = prng.uniform(-2.0, 2.0);
      lq[static_cast<std::size_t>(i)] = prng.uniform(-1.0, 1.0);
      mp[static_cast<std::size_t>(i)] = prng.uniform(-2.0, 2.0);
      lp[static_cast<std::size_t>(i)] = prng.uniform(-1.0, 1.0);
    }
    const double closed = kl_gaussian(mq, lq, mp, lp);
    Rng mc_rng(1000 + static_cast<std::uint64_t>(rep));
    const double mc = kl_monte_carlo(mq, lq, mp, lp, 1000000, mc_rng);
    CHECK(mc == doctest::Approx(closed).epsilon(0.02));
  }
}

TEST_CASE("total loss assembles the breakdown") {
  VoxelModel4D pred = VoxelModel4D::zeros({1, 1, 2, 1}, VoxelKind::probabilistic);
  pred.data = {0.5f, 0.0f};
  VoxelModel4D target = VoxelModel4D::zeros({1, 1, 2, 1}, VoxelKind::binary);
  target.data = {1.0f, 0.0f};

  LatentState latents;
  for (auto& lv : latents.levels) lv = kl_ten_level();

  // DL = 1 - 2/2.5 = 0.2 and each KL = 10, so the paper weights give 0.32.
  LossBreakdown b = total_loss(pred, target, latents, LossWeights{});
  CHECK(b.dice_loss == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(b.kl[0] == 10.0);
  CHECK(b.kl[1] == 10.0);
  CHECK(b.kl[2] == 10.0);
  CHECK(b.total == doctest::Approx(0.32).epsilon(1e-12));

  // alpha = 0 annihilates the KL terms exactly.
  LossWeights off;
  off.alpha = 0.0;
  CHECK(total_loss(pred, target, latents, off).total == b.dice_loss);

  // Posterior forced onto the prior: every divergence is exactly zero.
  LatentState merged = latents;
  for (auto& lv : merged.levels) {
    lv.post_mu = lv.prior_mu;
    lv.post_logvar = lv.prior_logvar;
  }
  LossBreakdown zb = total_loss(pred, target, merged, LossWeights{});
  CHECK(zb.kl[0] == 0.0);
  CHECK(zb.kl[1] == 0.0);
  CHECK(zb.kl[2] == 0.0);
  CHECK(zb.total == zb.dice_loss);
}

TEST_CASE("total loss breakdown invariant on random latents") {
  Rng rng(91);
  VoxelModel4D pred = random_prob({4, 4, 4, 2}, 14);
  VoxelModel4D target = random_binary({4, 4, 4, 2}, 15);
  LatentState latents;
  for (auto& lv : latents.levels) {
    const std::size_t n = 4 + rng.below(4);
    lv.post_mu.resize(n);
    lv.post_logvar.resize(n);
    lv.prior_mu.resize(n);
    lv.prior_logvar.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      lv.post_mu[i] = static_cast<float>(rng.uniform(-2.0, 2.0));
      lv.post_logvar[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
      lv.prior_mu[i] = static_cast<float>(rng.uniform(-2.0, 2.0));
      lv.prior_logvar[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
  }
  LossWeights w;
  w.alpha = 0.7;
  w.betas = {0.002, 0.003, 0.05};
  LossBreakdown b = total_loss(pred, target, latents, w);
  const double recomposed =
      b.dice_loss + w.alpha * (w.betas[0] * b.kl[0] + w.betas[1] * b.kl[1] + w.betas[2] * b.kl[2]);
  CHECK(std::abs(b.total - recomposed) <= 1e-6 * std::abs(b.total));
  CHECK(b.kl[0] >= 0.0);
  CHECK(b.dice_loss >= 0.0);
  CHECK(b.dice_loss <= 1.0);
}

TEST_CASE("learning rate schedule halves every 30 epochs") {
  TrainConfig tc;
  CHECK(lr_at(tc, 0) == 1e-3);
  CHECK(lr_at(tc, 29) == 1e-3);
  CHECK(lr_at(tc, 30) == 5e-4);
  CHECK(lr_at(tc, 60) == 2.5e-4);
  CHECK(lr_at(tc, 90) == 1.25e-4);
  CHECK_THROWS_AS(lr_at(tc, -1), InvalidArgumentError);
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  CHECK_NOTHROW(tc.validate());
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), InvalidArgumentError);
  tc = TrainConfig{};
  tc.early_stop_patience = tc.max_epochs;
  CHECK_THROWS_AS(tc.validate(), InvalidArgumentError);
  tc = TrainConfig{};
  tc.initial_lr = 0.0;
  CHECK_THROWS_AS(tc.validate(), InvalidArgumentError);
  tc = TrainConfig{};
  tc.lr_decay_every = 0;
  CHECK_THROWS_AS(tc.validate(), InvalidArgumentError);
}

TEST_CASE("history csv layout") {
  std::vector<EpochStats> history(2);
  history[0] = {0, 1e-3, 0.5, 1.0, 2.0, 3.0, 0.536, 0.25};
  history[1] = {1, 1e-3, 0.25, 1.5, 2.5, 3.5, 0.289, 0.5};
  const std::string csv = history_csv(history);
  std::istringstream in(csv);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "epoch,lr,DL,KL1,KL2,KL3,total,val_dice");
  REQUIRE(std::getline(in, line));
  CHECK(line == "0,0.001,0.5,1,2,3,0.536,0.25");
  REQUIRE(std::getline(in, line));
  CHECK(line.rfind("1,0.001,0.25,", 0) == 0);
  CHECK_FALSE(std::getline(in, line));
}

TEST_CASE("train rejects empty splits") {
  DatasetManifest manifest;
  manifest.entries.push_back({"s0.vox4", "s0", "train"});
  ArchConfig arch = tiny_config();
  CHECK_THROWS_AS(train(arch, TrainConfig{}, LossWeights{}, manifest, "/nonexistent", 1),
                  InvalidArgumentError);
  manifest.entries[0].split = "val";
  CHECK_THROWS_AS(train(arch, TrainConfig{}, LossWeights{}, manifest, "/nonexistent", 1),
                  InvalidArgumentError);
}

namespace {

std::string tiny_dataset(const TempDir& dir) {
  BuildDatasetOptions opt;
  opt.n_subjects = 3;
  opt.split_fractions = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  opt.seed = 7;
  opt.grid_size = 8;
  const std::string path = (dir.path / "data").string();
  build_dataset(opt, path);
  return path;
}

TrainConfig short_run_config() {
  TrainConfig tc;
  tc.batch_size = 2;
  tc.max_epochs = 6;
  tc.early_stop_patience = 5;
  tc.seed = 77;
  return tc;
}

}  // namespace

TEST_CASE("training is deterministic for a fixed seed") {
  TempDir dir;
  const std::string data = tiny_dataset(dir);
  ArchConfig arch = tiny_config();
  TrainConfig tc = short_run_config();

  TrainResult a = train(arch, tc, LossWeights{}, data, 1);
  TrainResult b = train(arch, tc, LossWeights{}, data, 1);

  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].epoch == b.history[i].epoch);
    CHECK(a.history[i].lr == b.history[i].lr);
    CHECK(a.history[i].dice_loss == b.history[i].dice_loss);
    CHECK(a.history[i].kl1 == b.history[i].kl1);
    CHECK(a.history[i].kl2 == b.history[i].kl2);
    CHECK(a.history[i].kl3 == b.history[i].kl3);
    CHECK(a.history[i].total == b.history[i].total);
    CHECK(a.history[i].val_dice == b.history[i].val_dice);
  }
  CHECK(a.best_epoch == b.best_epoch);
  CHECK(a.best_val_dice == b.best_val_dice);
  REQUIRE(a.best.tensors.size() == b.best.tensors.size());
  for (const auto& [path, t] : a.best.tensors) CHECK(t.data == b.best.tensors.at(path).data);

  // History export round-trips through a file.
  const std::string csv_path = (dir.path / "history.csv").string();
  write_history_csv(a.history, csv_path);
  std::ifstream in(csv_path);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "epoch,lr,DL,KL1,KL2,KL3,total,val_dice");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == static_cast<int>(a.history.size()));
}

namespace {

// One well-resolved phantom (no frame drops below ~300 occupied voxels), with
// the same file serving as the train and validation subject.
std::string single_phantom_dataset(const TempDir& dir) {
  PhantomParams p;
  p.grid_size = 16;
  p.outer_radii = {6.0, 5.5, 5.0};
  p.wall_thickness = 2.5;
  p.center = {7.5, 7.5, 7.5};
  p.systole_frame = 5;
  p.min_scale = 0.8;
  p.seed = 3;
  const std::string path = (dir.path / "single").string();
  std::filesystem::create_directories(path);
  write_vox4(generate_phantom(p), path + "/s0.vox4");
  DatasetManifest manifest;
  manifest.entries.push_back({"s0.vox4", "s0", "train"});
  manifest.entries.push_back({"s0.vox4", "s0v", "val"});
  manifest.write(path + "/manifest.json");
  return path;
}

}  // namespace

TEST_CASE("overfitting a single sample drives the dice loss down") {
  TempDir dir;
  const std::string data = single_phantom_dataset(dir);

  // A single resolution level keeps the decoder path shallow enough for the
  // loss to reach the target within the step budget.
  ArchConfig arch;
  arch.grid_size = 16;
  arch.input_frames = 5;
  arch.output_frames = 10;
  arch.depth = 1;
  arch.base_channels = 16;
  arch.latent_dims = {8, 6, 4};

  TrainConfig tc;
  tc.batch_size = 1;
  tc.max_epochs = 300;
  tc.early_stop_patience = 299;
  tc.initial_lr = 3e-3;
  tc.lr_decay_every = 300;  // constant rate across the run
  tc.seed = 11;

  TrainResult r = train(arch, tc, LossWeights{}, data, 1);
  REQUIRE_FALSE(r.history.empty());

  double min_dl = 1.0;
  for (const EpochStats& e : r.history) min_dl = std::min(min_dl, e.dice_loss);
  CHECK(min_dl < 0.05);

  // The reported best is the history's best, and the returned parameters
  // reproduce exactly that validation score.
  REQUIRE(r.best_epoch >= 0);
  double hist_best = -1.0;
  for (const EpochStats& e : r.history) hist_best = std::max(hist_best, e.val_dice);
  CHECK(r.best_val_dice == hist_best);
  CHECK(r.history[static_cast<std::size_t>(r.best_epoch)].val_dice == r.best_val_dice);

  DatasetManifest manifest = DatasetManifest::read(data + "/manifest.json");
  auto val_entries = manifest.split("val");
  REQUIRE(val_entries.size() == 1);
  VoxelModel4D hfr = read_vox4(data + "/" + val_entries[0]->path);
  auto [lfr, task] = subsample_frames(hfr, 1);
  VoxelModel4D pred = binarize(infer(r.best, lfr), 0.5f);
  double sum = 0.0;
  for (int f : task.target_frames) sum += dice_frames(pred, f, hfr, f);
  CHECK(sum / static_cast<double>(task.target_frames.size()) ==
        doctest::Approx(r.best_val_dice).epsilon(1e-12));
}

TEST_CASE("composite loss falls monotonically at a gentle rate") {
  TempDir dir;
  const std::string data = tiny_dataset(dir);
  ArchConfig arch = tiny_config();

  // One sample per batch and a fixed per-sample noise draw make the epoch
  // objective deterministic, so each step must improve it early on.
  TrainConfig tc;
  tc.batch_size = 1;
  tc.max_epochs = 20;
  tc.early_stop_patience = 19;
  tc.seed = 11;

  TrainResult r = train(arch, tc, LossWeights{}, data, 1);
  REQUIRE(r.history.size() == 20);
  for (std::size_t i = 0; i + 1 < 20; ++i)
    CHECK(r.history[i + 1].total < r.history[i].total);
}

TEST_CASE("early stopping halts after a patience lapse") {
  TempDir dir;
  const std::string data = tiny_dataset(dir);
  ArchConfig arch = tiny_config();

  TrainConfig tc;
  tc.batch_size = 1;
  tc.max_epochs = 60;
  tc.early_stop_patience = 3;
  tc.seed = 5;

  TrainResult r = train(arch, tc, LossWeights{}, data, 1);
  REQUIRE_FALSE(r.history.empty());
  const int last_epoch = r.history.back().epoch;
  if (static_cast<int>(r.history.size()) < tc.max_epochs) {
    CHECK(last_epoch - r.best_epoch == tc.early_stop_patience);
  }
  CHECK(r.best_val_dice >= 0.0);
  CHECK(r.best_val_dice <= 1.0);
}

TEST_CASE("diverging runs abort with a numeric error") {
  TempDir dir;
  const std::string data = tiny_dataset(dir);
  ArchConfig arch = tiny_config();

  TrainConfig tc;
  tc.batch_size = 1;
  tc.max_epochs = 8;
  tc.early_stop_patience = 7;
  tc.seed = 3;
  tc.initial_lr = 1e30;  // blows the parameters up on the first step

  CHECK_THROWS_AS(train(arch, tc, LossWeights{}, data, 1), NumericError);
}
