#pragma once

#include "karma/decomposition/wavelet.hpp"
#include "karma/tensor.hpp"

namespace karma::decomp {

/// RMSNorm epsilon used throughout the temporal branch.
inline constexpr double kRmsEps = 1e-5;

/// High/low wavelet bands plus the temporal residual and its channel-flipped copy.
/// Shapes: high, low are [.. x D x M]; temporal_fwd, temporal_bwd are [.. x D x E_s].
struct FreqComponents {
  Tensor high;
  Tensor low;
  Tensor temporal_fwd;
  Tensor temporal_bwd;

  std::size_t coeffs() const { return high.shape().back(); }
};

/// Per-channel single-level DWT of the embedded seasonal signal [.. x D x E_s] plus
/// T_f = rmsnorm(x) and T_b = flip over channels of T_f.
FreqComponents hftd_decompose(const Tensor& x_se, const WaveletFilter& filter,
                              const Tensor& rms_gain);

/// Per-channel synthesis of (low, high) plus the temporal residual.
Tensor hftd_inverse(const FreqComponents& f, const WaveletFilter& filter);

}  // namespace karma::decomp
