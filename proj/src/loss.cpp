#include "loss.hpp"

#include <cmath>
#include <cstddef>

#include "common.hpp"

namespace fnet {

void LossWeights::validate() const {
  if (!std::isfinite(alpha) || alpha < 0.0)
    throw InvalidArgumentError("loss weight alpha must be finite and nonnegative");
  for (std::size_t i = 0; i < betas.size(); ++i)
    if (!std::isfinite(betas[i]) || betas[i] < 0.0)
      throw InvalidArgumentError("loss weight beta" + std::to_string(i + 1) +
                                 " must be finite and nonnegative");
}

double dice_loss(const VoxelModel4D& pred, const VoxelModel4D& target) {
  if (pred.dims != target.dims)
    throw DimensionError("dice_loss: pred and target have different dims");
  double inter = 0.0, psum = 0.0, gsum = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double p = pred.data[i];
    const double g = target.data[i];
    inter += p * g;
    psum += p;
    gsum += g;
  }
  return 1.0 - (2.0 * inter + kDiceEps) / (psum + gsum + kDiceEps);
}

namespace {

template <class T>
double kl_gaussian_impl(const std::vector<T>& mu_q, const std::vector<T>& logvar_q,
                        const std::vector<T>& mu_p, const std::vector<T>& logvar_p) {
  const std::size_t n = mu_q.size();
  if (logvar_q.size() != n || mu_p.size() != n || logvar_p.size() != n)
    throw DimensionError("kl_gaussian: vector lengths differ (" + std::to_string(n) + ", " +
                         std::to_string(logvar_q.size()) + ", " + std::to_string(mu_p.size()) +
                         ", " + std::to_string(logvar_p.size()) + ")");
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double mq = mu_q[i], lq = logvar_q[i], mp = mu_p[i], lp = logvar_p[i];
    if (!std::isfinite(mq) || !std::isfinite(lq) || !std::isfinite(mp) || !std::isfinite(lp))
      throw NumericError("kl_gaussian: non-finite input at dimension " + std::to_string(i));
    const double var_ratio = std::exp(lq) / std::exp(lp);
    const double mean_term = (mp - mq) * (mp - mq) / std::exp(lp);
    sum += 0.5 * (var_ratio + mean_term - 1.0 + lp - lq);
  }
  return sum;
}

}  // namespace

double kl_gaussian(const std::vector<double>& mu_q, const std::vector<double>& logvar_q,
                   const std::vector<double>& mu_p, const std::vector<double>& logvar_p) {
  return kl_gaussian_impl(mu_q, logvar_q, mu_p, logvar_p);
}

double kl_gaussian(const std::vector<float>& mu_q, const std::vector<float>& logvar_q,
                   const std::vector<float>& mu_p, const std::vector<float>& logvar_p) {
  return kl_gaussian_impl(mu_q, logvar_q, mu_p, logvar_p);
}

LossBreakdown total_loss(const VoxelModel4D& pred, const VoxelModel4D& target,
                         const LatentState& latents, const LossWeights& w) {
  w.validate();
  LossBreakdown out;
  out.dice_loss = dice_loss(pred, target);
  double weighted = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& lv = latents.levels[i];
    out.kl[i] = kl_gaussian(lv.post_mu, lv.post_logvar, lv.prior_mu, lv.prior_logvar);
    weighted += w.betas[i] * out.kl[i];
  }
  out.total = out.dice_loss + w.alpha * weighted;
  return out;
}

}  // namespace fnet
