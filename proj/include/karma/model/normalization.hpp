#pragma once

#include <utility>
#include <vector>

#include "karma/tensor.hpp"

namespace karma::model {

/// Per-window, per-channel statistics: mean and std are [batch x channels].
struct NormStats {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::vector<double> mean;
  std::vector<double> std;
  double eps = 1e-5;
};

/// z-scores every channel of every window over the time axis using the population std,
/// clamped below at eps. x is [L x D] or [B x L x D]; the result carries no gradient.
std::pair<Tensor, NormStats> instance_normalize(const Tensor& x, double eps);

/// y * std + mean per channel; differentiable in y.
Tensor instance_denormalize(const Tensor& y, const NormStats& stats);

}  // namespace karma::model
