#pragma once

#include "karma/ops.hpp"
#include "karma/rng.hpp"
#include "karma/tensor.hpp"

namespace karma {

/// Samples a trainable tensor with entries uniform on (-bound, bound).
Tensor uniform_parameter(Shape shape, double bound, Rng& rng);

/// y = x * weight (+ bias); weight is [in x out].
struct Linear {
  Tensor weight;
  Tensor bias;  // undefined when the layer has no bias

  /// Weight and bias uniform on (-1/sqrt(in), 1/sqrt(in)).
  static Linear init(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  Tensor forward(const Tensor& x) const;
};

}  // namespace karma
