#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "karma/tensor.hpp"

namespace karma::training {

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;  // first moments, one buffer per parameter
  std::vector<std::vector<double>> v;  // second moments
};

/// Bias-corrected Adam on every parameter, reading and then clearing its gradient buffer.
/// Moment buffers are created on the first call. A parameter without a gradient buffer is
/// a ContractError, as is a parameter list that changes between calls.
void adam_step(std::span<const Tensor> params, AdamState& state);

/// base_lr * 0.5^epoch.
double lr_decay(std::size_t epoch, double base_lr);

struct EarlyStop {
  std::size_t patience = 3;
  double min_delta = 0.0;
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_improve = 0;
};

struct StopDecision {
  bool stop = false;
  bool improved = false;  // this loss is the new best
};

/// A loss below best - min_delta resets the counter; anything else increments it, and the
/// call that brings it to patience says stop. A NaN loss is a TrainingError.
StopDecision early_stop_update(EarlyStop& state, double val_loss);

}  // namespace karma::training
