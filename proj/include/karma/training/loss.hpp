#pragma once

#include "karma/tensor.hpp"

namespace karma::training {

struct LossConfig {
  double alpha = 0.2;  // weight of the time-domain term

  /// ConfigError with key "alpha" outside [0, 1].
  void validate() const;
};

/// alpha * mean((y - y_hat)^2) + (1 - alpha) * mean |F(y) - F(y_hat)|, F the one-sided DFT
/// along time for each channel and |.| the complex modulus. y, y_hat: [T x D] or [B x T x D].
Tensor hybrid_loss(const Tensor& y, const Tensor& y_hat, const LossConfig& cfg);

/// Time-domain term alone.
Tensor mse_loss(const Tensor& y, const Tensor& y_hat);
/// Frequency-domain term alone.
Tensor spectral_loss(const Tensor& y, const Tensor& y_hat);

}  // namespace karma::training
