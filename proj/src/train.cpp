#include "train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "common.hpp"
#include "tensor.hpp"
#include "threadpool.hpp"

namespace fnet {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// Shortest decimal form that round-trips the exact double.
std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

struct TrainSample {
  Tensor<float> input;   // [F_l, D, D, D]
  Tensor<float> target;  // [F_h, D, D, D]
};

struct ValCase {
  VoxelModel4D lfr;
  VoxelModel4D hfr;
  std::vector<int> estimated;  // 1-based frames scored against the reference
};

struct SampleResult {
  std::map<std::string, std::vector<float>> grads;
  double dl = 0.0;
  std::array<double, 3> kl{0.0, 0.0, 0.0};
  double total = 0.0;
};

VoxelModel4D load_model(const std::string& base_dir, const ManifestEntry& e,
                        const ArchConfig& arch) {
  VoxelModel4D m = read_vox4(base_dir + "/" + e.path);
  const auto d = static_cast<std::uint32_t>(arch.grid_size);
  if (m.dims[0] != d || m.dims[1] != d || m.dims[2] != d ||
      m.dims[3] != static_cast<std::uint32_t>(arch.output_frames))
    throw InvalidArgumentError("dataset model " + e.path + " has dims incompatible with the " +
                               "configured architecture");
  return m;
}

class Trainer {
 public:
  Trainer(const ArchConfig& arch, const TrainConfig& tc, const LossWeights& w,
          const DatasetManifest& manifest, const std::string& base_dir, int interval)
      : arch_(arch), tc_(tc), w_(w) {
    arch_.validate();
    tc_.validate();
    w_.validate();

    auto train_entries = manifest.split("train");
    auto val_entries = manifest.split("val");
    if (train_entries.empty()) throw InvalidArgumentError("train: training split is empty");
    if (val_entries.empty()) throw InvalidArgumentError("train: validation split is empty");

    for (const ManifestEntry* e : train_entries) {
      VoxelModel4D hfr = load_model(base_dir, *e, arch_);
      auto [lfr, task] = subsample_frames(hfr, interval);
      require_input_frames(lfr);
      train_.push_back({frames_to_tensor<float>(lfr), frames_to_tensor<float>(hfr)});
    }
    for (const ManifestEntry* e : val_entries) {
      VoxelModel4D hfr = load_model(base_dir, *e, arch_);
      auto [lfr, task] = subsample_frames(hfr, interval);
      require_input_frames(lfr);
      val_.push_back({std::move(lfr), std::move(hfr), task.target_frames});
    }

    params_.arch = arch_;
    params_.tensors = init_params(arch_, tc_.seed).tensors;
    for (const auto& [path, t] : params_.tensors) {
      adam_m_[path].assign(t.data.size(), 0.0f);
      adam_v_[path].assign(t.data.size(), 0.0f);
    }
    sampler_root_ = splitmix64(tc_.seed ^ fnv1a64("latent-sampler"));
    order_root_ = splitmix64(tc_.seed ^ fnv1a64("sample-order"));
  }

  TrainResult run(const std::function<void(const EpochStats&)>& on_epoch) {
    TrainResult result;
    result.best_val_dice = -1.0;

    for (int epoch = 0; epoch < tc_.max_epochs; ++epoch) {
      EpochStats stats = run_epoch(epoch);
      stats.val_dice = validation_dice();
      result.history.push_back(stats);
      if (on_epoch) on_epoch(stats);

      if (stats.val_dice > result.best_val_dice) {
        result.best_val_dice = stats.val_dice;
        result.best_epoch = epoch;
        result.best = params_;
      } else if (epoch - result.best_epoch >= tc_.early_stop_patience) {
        break;
      }
    }
    return result;
  }

 private:
  void require_input_frames(const VoxelModel4D& lfr) const {
    if (lfr.frame_count() != arch_.input_frames)
      throw InvalidArgumentError(
          "train: subsampling yields " + std::to_string(lfr.frame_count()) +
          " input frames but the architecture expects " + std::to_string(arch_.input_frames));
  }

  EpochStats run_epoch(int epoch) {
    const double lr = lr_at(tc_, epoch);
    const std::int64_t n = static_cast<std::int64_t>(train_.size());

    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng(splitmix64(order_root_ ^ static_cast<std::uint64_t>(epoch)));
    order_rng.shuffle(order);

    double sum_dl = 0.0, sum_total = 0.0;
    std::array<double, 3> sum_kl{0.0, 0.0, 0.0};

    for (std::int64_t start = 0, batch = 0; start < n; start += tc_.batch_size, ++batch) {
      const std::int64_t count = std::min<std::int64_t>(tc_.batch_size, n - start);
      std::vector<SampleResult> slots(static_cast<std::size_t>(count));
      global_pool().for_each_index(count, [&](std::int64_t slot) {
        // Latent noise is a fixed draw per training sample, keyed to the
        // sample's identity: the objective for a fixed dataset is then
        // deterministic, independent of shuffling and scheduling.
        const std::uint64_t sample = static_cast<std::uint64_t>(
            order[static_cast<std::size_t>(start + slot)]);
        run_sample(train_[static_cast<std::size_t>(sample)],
                   splitmix64(sampler_root_ ^ sample), slots[static_cast<std::size_t>(slot)]);
      });

      for (std::int64_t slot = 0; slot < count; ++slot) {
        const SampleResult& r = slots[static_cast<std::size_t>(slot)];
        if (!std::isfinite(r.total))
          throw NumericError("training diverged: non-finite loss at epoch " +
                             std::to_string(epoch) + ", batch " + std::to_string(batch) +
                             " (DL=" + format_double(r.dl) + ", KL=" + format_double(r.kl[0]) +
                             "/" + format_double(r.kl[1]) + "/" + format_double(r.kl[2]) + ")");
        sum_dl += r.dl;
        sum_total += r.total;
        for (int i = 0; i < 3; ++i) sum_kl[static_cast<std::size_t>(i)] += r.kl[static_cast<std::size_t>(i)];
      }

      adam_step(slots, count, lr);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.dice_loss = sum_dl / static_cast<double>(n);
    stats.kl1 = sum_kl[0] / static_cast<double>(n);
    stats.kl2 = sum_kl[1] / static_cast<double>(n);
    stats.kl3 = sum_kl[2] / static_cast<double>(n);
    stats.total = sum_total / static_cast<double>(n);
    return stats;
  }

  void run_sample(const TrainSample& s, std::uint64_t eps_seed, SampleResult& out) const {
    Graph<float> g;
    Rng sampler(eps_seed);
    NetworkBuild<float> nb = build_forward<float>(g, arch_, params_.tensors, s.input,
                                                  /*train_mode=*/true, &sampler,
                                                  /*params_need_grad=*/true);
    const int target = g.leaf(s.target, false);
    const int dl = g.soft_dice_loss(nb.output, target, static_cast<float>(kDiceEps));
    std::array<int, 3> kls{};
    int total = dl;
    for (int i = 0; i < 3; ++i) {
      const auto li = static_cast<std::size_t>(i);
      kls[li] = g.kl_diag_gaussian(nb.post_mu[li], nb.post_logvar[li], nb.prior_mu[li],
                                   nb.prior_logvar[li]);
      total = g.add(total, g.scale(kls[li], static_cast<float>(w_.alpha * w_.betas[li])));
    }
    g.backward(total);

    out.dl = g.scalar(dl);
    for (int i = 0; i < 3; ++i)
      out.kl[static_cast<std::size_t>(i)] = g.scalar(kls[static_cast<std::size_t>(i)]);
    out.total = g.scalar(total);
    for (const auto& [path, node] : nb.param_nodes) out.grads[path] = g.grad(node);
  }

  // Mean batch gradient, then one Adam update per parameter tensor. Slots are
  // reduced in index order so results do not depend on the thread count.
  void adam_step(const std::vector<SampleResult>& slots, std::int64_t count, double lr) {
    ++adam_t_;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(adam_t_));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(adam_t_));
    const double inv_count = 1.0 / static_cast<double>(count);

    for (auto& [path, tensor] : params_.tensors) {
      std::vector<float>& m = adam_m_[path];
      std::vector<float>& v = adam_v_[path];
      std::vector<float>& theta = tensor.data;
      std::vector<const std::vector<float>*> slot_grads;
      slot_grads.reserve(static_cast<std::size_t>(count));
      for (std::int64_t slot = 0; slot < count; ++slot)
        slot_grads.push_back(&slots[static_cast<std::size_t>(slot)].grads.at(path));
      for (std::size_t i = 0; i < theta.size(); ++i) {
        double grad = 0.0;
        for (const std::vector<float>* sg : slot_grads) grad += (*sg)[i];
        grad *= inv_count;
        const double mi = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * grad;
        const double vi = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * grad * grad;
        m[i] = static_cast<float>(mi);
        v[i] = static_cast<float>(vi);
        theta[i] = static_cast<float>(theta[i] - lr * (mi / bc1) / (std::sqrt(vi / bc2) + kAdamEps));
      }
    }
  }

  double validation_dice() const {
    std::vector<double> per_case(val_.size(), 0.0);
    global_pool().for_each_index(static_cast<std::int64_t>(val_.size()), [&](std::int64_t i) {
      const ValCase& vc = val_[static_cast<std::size_t>(i)];
      VoxelModel4D pred = binarize(infer(params_, vc.lfr), 0.5f);
      double sum = 0.0;
      for (int f : vc.estimated) sum += dice_frames(pred, f, vc.hfr, f);
      per_case[static_cast<std::size_t>(i)] = sum / static_cast<double>(vc.estimated.size());
    });
    double sum = 0.0;
    for (double d : per_case) sum += d;
    return sum / static_cast<double>(per_case.size());
  }

  ArchConfig arch_;
  TrainConfig tc_;
  LossWeights w_;
  std::vector<TrainSample> train_;
  std::vector<ValCase> val_;
  NetworkParams params_;
  std::map<std::string, std::vector<float>> adam_m_, adam_v_;
  std::int64_t adam_t_ = 0;
  std::uint64_t sampler_root_ = 0;
  std::uint64_t order_root_ = 0;
};

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw InvalidArgumentError("batch_size must be positive");
  if (max_epochs < 1) throw InvalidArgumentError("max_epochs must be positive");
  if (!std::isfinite(initial_lr) || initial_lr <= 0.0)
    throw InvalidArgumentError("initial_lr must be positive");
  if (!std::isfinite(lr_decay_factor) || lr_decay_factor <= 0.0)
    throw InvalidArgumentError("lr_decay_factor must be positive");
  if (lr_decay_every < 1) throw InvalidArgumentError("lr_decay_every must be positive");
  if (early_stop_patience < 1) throw InvalidArgumentError("early_stop_patience must be positive");
  if (early_stop_patience >= max_epochs)
    throw InvalidArgumentError("early_stop_patience must be below max_epochs");
}

double lr_at(const TrainConfig& tc, int epoch) {
  if (epoch < 0) throw InvalidArgumentError("epoch must be nonnegative");
  return tc.initial_lr * std::pow(tc.lr_decay_factor, epoch / tc.lr_decay_every);
}

std::string history_csv(const std::vector<EpochStats>& history) {
  std::ostringstream out;
  out << "epoch,lr,DL,KL1,KL2,KL3,total,val_dice\n";
  for (const EpochStats& e : history) {
    out << e.epoch << ',' << format_double(e.lr) << ',' << format_double(e.dice_loss) << ','
        << format_double(e.kl1) << ',' << format_double(e.kl2) << ',' << format_double(e.kl3)
        << ',' << format_double(e.total) << ',' << format_double(e.val_dice) << '\n';
  }
  return out.str();
}

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << history_csv(history);
  out.flush();
  if (!out) throw IoError("failed writing " + path);
}

TrainResult train(const ArchConfig& arch, const TrainConfig& tc, const LossWeights& w,
                  const DatasetManifest& manifest, const std::string& base_dir, int interval,
                  const std::function<void(const EpochStats&)>& on_epoch) {
  Trainer trainer(arch, tc, w, manifest, base_dir, interval);
  return trainer.run(on_epoch);
}

TrainResult train(const ArchConfig& arch, const TrainConfig& tc, const LossWeights& w,
                  const std::string& dataset_dir, int interval,
                  const std::function<void(const EpochStats&)>& on_epoch) {
  DatasetManifest manifest = DatasetManifest::read(dataset_dir + "/manifest.json");
  return train(arch, tc, w, manifest, dataset_dir, interval, on_epoch);
}

}  // namespace fnet
