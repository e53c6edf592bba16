#pragma once

#include <span>
#include <string>
#include <vector>

#include "karma/tensor.hpp"

namespace karma::decomp {

/// Two-channel orthonormal filter bank with periodic boundary extension.
///
/// Taps are applied in correlation form. Analysis of a length-n signal gives
///   low[k]  = sum_i analysis_low[i]  * x[(2k + i) mod n]
///   high[k] = sum_i analysis_high[i] * x[(2k + i) mod n]
/// and synthesis upsamples and accumulates
///   x[(2k + i) mod n] += synthesis_low[i] * low[k] + synthesis_high[i] * high[k].
/// For an orthonormal bank the synthesis taps equal the analysis taps.
struct WaveletFilter {
  std::string name;
  std::vector<double> analysis_low;
  std::vector<double> analysis_high;
  std::vector<double> synthesis_low;
  std::vector<double> synthesis_high;

  std::size_t support() const { return analysis_low.size(); }

  static WaveletFilter haar();
  /// Daubechies with four vanishing moments (eight taps).
  static WaveletFilter db4();
  /// "haar" or "db4"; anything else is a ConfigError.
  static WaveletFilter by_name(const std::string& name);
};

struct DwtCoefficients {
  std::vector<double> low;
  std::vector<double> high;
};

/// Single-level analysis of one channel. Odd lengths are a ConfigError.
DwtCoefficients dwt_analyze(std::span<const double> x, const WaveletFilter& filter);
/// Exact inverse of dwt_analyze. Mismatched band lengths are a ShapeError.
std::vector<double> dwt_synthesize(std::span<const double> low, std::span<const double> high,
                                   const WaveletFilter& filter);

struct DwtBands {
  Tensor low;
  Tensor high;
};

/// Differentiable analysis applied independently to every row (last axis).
DwtBands dwt_analyze(const Tensor& x, const WaveletFilter& filter);
/// Differentiable synthesis applied independently to every row.
Tensor dwt_synthesize(const Tensor& low, const Tensor& high, const WaveletFilter& filter);

}  // namespace karma::decomp
