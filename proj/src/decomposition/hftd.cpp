#include "karma/decomposition/hftd.hpp"

#include "karma/error.hpp"
#include "karma/ops.hpp"

namespace karma::decomp {

FreqComponents hftd_decompose(const Tensor& x_se, const WaveletFilter& filter,
                              const Tensor& rms_gain) {
  DwtBands bands = dwt_analyze(x_se, filter);
  FreqComponents f;
  f.high = bands.high;
  f.low = bands.low;
  f.temporal_fwd = rmsnorm(x_se, rms_gain, kRmsEps);
  f.temporal_bwd = flip_axis0(f.temporal_fwd);
  return f;
}

Tensor hftd_inverse(const FreqComponents& f, const WaveletFilter& filter) {
  Shape expected = f.low.shape();
  expected.back() *= 2;
  if (f.high.shape() != f.low.shape() || f.temporal_fwd.shape() != expected) {
    throw ShapeError("hftd_inverse: inconsistent components low " + to_string(f.low.shape()) +
                     ", high " + to_string(f.high.shape()) + ", temporal " +
                     to_string(f.temporal_fwd.shape()));
  }
  return add(dwt_synthesize(f.low, f.high, filter), f.temporal_fwd);
}

}  // namespace karma::decomp
