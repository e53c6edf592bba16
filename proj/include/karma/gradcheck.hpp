#pragma once

#include <functional>
#include <span>

#include "karma/tensor.hpp"

namespace karma {

/// Compares reverse-mode gradients of a scalar function against central differences.
/// Returns max over coordinates of |analytic - numeric| / max(1, |analytic|).
///
/// `x` must be a leaf that requires a gradient; its gradient buffer is overwritten.
double fd_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h);

/// One scalar entry of a parameter tensor.
struct Coordinate {
  Tensor param;
  std::size_t index;
};

/// Same check for a closure over parameters, restricted to the listed coordinates.
/// Gradients of the coordinate tensors are zeroed before the analytic pass.
double fd_check(const std::function<Tensor()>& f, std::span<const Coordinate> coords, double h);

}  // namespace karma
