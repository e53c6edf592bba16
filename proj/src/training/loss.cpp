#include "karma/training/loss.hpp"

#include <cmath>

#include "karma/error.hpp"
#include "karma/ops.hpp"

namespace karma::training {

namespace {

void require_match(const Tensor& y, const Tensor& y_hat) {
  if (y.shape() != y_hat.shape()) {
    throw ShapeError("loss: target " + to_string(y.shape()) + " vs prediction " + to_string(y_hat.shape()));
  }
  if (y.rank() < 2) throw ShapeError("loss: expected [T x D] or [B x T x D], got " + to_string(y.shape()));
}

}  // namespace

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("alpha must lie in [0, 1], got " + std::to_string(alpha), "alpha");
  }
}

Tensor mse_loss(const Tensor& y, const Tensor& y_hat) {
  require_match(y, y_hat);
  return mean(square(sub(y_hat, y)));
}

Tensor spectral_loss(const Tensor& y, const Tensor& y_hat) {
  require_match(y, y_hat);
  // Channels to rows so the transform runs along time.
  const Spectrum diff = dft_apply(transpose(sub(y_hat, y)));
  return mean(complex_abs(diff.re, diff.im));
}

Tensor hybrid_loss(const Tensor& y, const Tensor& y_hat, const LossConfig& cfg) {
  cfg.validate();
  require_match(y, y_hat);
  if (cfg.alpha == 1.0) return mse_loss(y, y_hat);
  if (cfg.alpha == 0.0) return spectral_loss(y, y_hat);
  return add(scale(mse_loss(y, y_hat), cfg.alpha), scale(spectral_loss(y, y_hat), 1.0 - cfg.alpha));
}

}  // namespace karma::training
