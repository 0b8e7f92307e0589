#include "gradcheck.hpp"

#include <cmath>
#include <numeric>

namespace fnet {

GradCheckReport grad_check(const std::function<double(const ParamStoreD&, GradMapD*)>& f,
                           ParamStoreD params, double eps_scale,
                           std::int64_t max_coords_per_param, std::uint64_t sample_seed) {
  GradMapD grads;
  double base = f(params, &grads);
  if (!std::isfinite(base)) throw NumericError("grad_check: objective is non-finite");

  GradCheckReport rep;
  for (auto& [name, tensor] : params) {
    auto git = grads.find(name);
    if (git == grads.end())
      throw InvalidArgumentError("grad_check: no gradient returned for " + name);
    const std::vector<double>& analytic = git->second;
    if (analytic.size() != tensor.data.size())
      throw DimensionError("grad_check: gradient length mismatch for " + name);

    std::int64_t count = tensor.numel();
    std::vector<std::int64_t> coords(static_cast<std::size_t>(count));
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords_per_param >= 0 && count > max_coords_per_param) {
      Rng rng(splitmix64(sample_seed ^ fnv1a64(name)));
      rng.shuffle(coords.begin(), coords.end());
      coords.resize(static_cast<std::size_t>(max_coords_per_param));
    }

    for (std::int64_t c : coords) {
      double theta = tensor.data[static_cast<std::size_t>(c)];
      double eps = eps_scale * std::max(1.0, std::fabs(theta));
      tensor.data[static_cast<std::size_t>(c)] = theta + eps;
      double fp = f(params, nullptr);
      tensor.data[static_cast<std::size_t>(c)] = theta - eps;
      double fm = f(params, nullptr);
      tensor.data[static_cast<std::size_t>(c)] = theta;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("grad_check: non-finite objective while perturbing " + name);
      double numeric = (fp - fm) / (2.0 * eps);
      double a = analytic[static_cast<std::size_t>(c)];
      double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      ++rep.coords_checked;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_param = name;
        rep.worst_index = c;
        rep.worst_analytic = a;
        rep.worst_numeric = numeric;
      }
    }
  }
  return rep;
}

}  // namespace fnet
