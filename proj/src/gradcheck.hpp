#pragma once

// Finite-difference validation of reverse-mode gradients. Double precision
// only: central differences are unreliable in single precision.

#include <functional>
#include <map>
#include <string>

#include "tensor.hpp"

namespace fnet {

using ParamStoreD = std::map<std::string, Tensor<double>>;
using GradMapD = std::map<std::string, std::vector<double>>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::int64_t coords_checked = 0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// f(params, grads_out): returns the scalar objective; when grads_out is
// non-null, fills it with the reverse-mode gradient of every entry.
//
// Per coordinate theta: eps = eps_scale * max(1, |theta|); the numeric
// derivative is (f(theta+eps) - f(theta-eps)) / (2 eps); the relative error
// denominator is max(|analytic|, |numeric|, 1e-8). When a parameter has more
// coordinates than max_coords_per_param (if >= 0), a seeded sample of
// coordinates is checked instead of all of them.
GradCheckReport grad_check(const std::function<double(const ParamStoreD&, GradMapD*)>& f,
                           ParamStoreD params, double eps_scale = 1e-3,
                           std::int64_t max_coords_per_param = -1,
                           std::uint64_t sample_seed = 0);

}  // namespace fnet
