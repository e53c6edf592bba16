#include "karma/decomposition/wavelet.hpp"

#include <cmath>

#include "karma/error.hpp"

namespace karma::decomp {
namespace {

// low/high filter from a scaling filter h via the alternating flip g[i] = (-1)^i h[S-1-i].
WaveletFilter from_scaling(std::string name, std::vector<double> h) {
  const std::size_t s = h.size();
  std::vector<double> g(s);
  for (std::size_t i = 0; i < s; ++i) g[i] = (i % 2 == 0 ? 1.0 : -1.0) * h[s - 1 - i];
  return WaveletFilter{std::move(name), h, g, h, g};
}

// out[k] += sum_i taps[i] * x[(2k + i) mod n]
void gather(const double* x, std::size_t n, const std::vector<double>& taps, double* out) {
  const std::size_t m = n / 2;
  for (std::size_t k = 0; k < m; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < taps.size(); ++i) acc += taps[i] * x[(2 * k + i) % n];
    out[k] += acc;
  }
}

// out[(2k + i) mod n] += taps[i] * c[k]
void scatter(const double* c, std::size_t n, const std::vector<double>& taps, double* out) {
  const std::size_t m = n / 2;
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t i = 0; i < taps.size(); ++i) out[(2 * k + i) % n] += taps[i] * c[k];
}

void require_even(std::size_t n) {
  if (n == 0 || n % 2 != 0) {
    throw ConfigError("wavelet analysis needs an even, positive length; got " + std::to_string(n),
                      "E_s");
  }
}

}  // namespace

WaveletFilter WaveletFilter::haar() {
  const double r = 1.0 / std::sqrt(2.0);
  return from_scaling("haar", {r, r});
}

WaveletFilter WaveletFilter::db4() {
  // Spectral factorisation of the degree-4 Daubechies polynomial, minimum phase.
  return from_scaling("db4", {0.23037781330889650086, 0.71484657055291564709, 0.63088076792985890788,
                              -0.027983769416859854211, -0.18703481171909308408,
                              0.030841381835560763627, 0.032883011666885199735,
                              -0.010597401785069032105});
}

WaveletFilter WaveletFilter::by_name(const std::string& name) {
  if (name == "haar") return haar();
  if (name == "db4") return db4();
  throw ConfigError("unknown wavelet '" + name + "' (expected haar or db4)", "wavelet");
}

DwtCoefficients dwt_analyze(std::span<const double> x, const WaveletFilter& filter) {
  require_even(x.size());
  DwtCoefficients c{std::vector<double>(x.size() / 2), std::vector<double>(x.size() / 2)};
  gather(x.data(), x.size(), filter.analysis_low, c.low.data());
  gather(x.data(), x.size(), filter.analysis_high, c.high.data());
  return c;
}

std::vector<double> dwt_synthesize(std::span<const double> low, std::span<const double> high,
                                   const WaveletFilter& filter) {
  if (low.size() != high.size() || low.empty()) {
    throw ShapeError("dwt_synthesize: band lengths differ (" + std::to_string(low.size()) +
                     " vs " + std::to_string(high.size()) + ")");
  }
  const std::size_t n = 2 * low.size();
  std::vector<double> x(n, 0.0);
  scatter(low.data(), n, filter.synthesis_low, x.data());
  scatter(high.data(), n, filter.synthesis_high, x.data());
  return x;
}

DwtBands dwt_analyze(const Tensor& x, const WaveletFilter& filter) {
  const std::size_t n = x.shape().back();
  require_even(n);
  const std::size_t m = n / 2;
  const std::size_t rows = x.size() / n;
  Shape band_shape = x.shape();
  band_shape.back() = m;
  Tensor low = detail::make_output(band_shape, {&x});
  Tensor high = detail::make_output(band_shape, {&x});
  for (std::size_t r = 0; r < rows; ++r) {
    gather(x.data().data() + r * n, n, filter.analysis_low, low.mutable_data().data() + r * m);
    gather(x.data().data() + r * n, n, filter.analysis_high, high.mutable_data().data() + r * m);
  }
  // The two bands share one input; each records its own adjoint.
  detail::record("dwt_analyze_low", low, [x, low, filter, rows, n, m] {
    if (!x.requires_grad()) return;
    for (std::size_t r = 0; r < rows; ++r)
      scatter(low.grad().data() + r * m, n, filter.analysis_low, x.mutable_grad().data() + r * n);
  });
  detail::record("dwt_analyze_high", high, [x, high, filter, rows, n, m] {
    if (!x.requires_grad()) return;
    for (std::size_t r = 0; r < rows; ++r)
      scatter(high.grad().data() + r * m, n, filter.analysis_high,
              x.mutable_grad().data() + r * n);
  });
  return {low, high};
}

Tensor dwt_synthesize(const Tensor& low, const Tensor& high, const WaveletFilter& filter) {
  if (low.shape() != high.shape()) {
    throw ShapeError("dwt_synthesize: band shapes differ " + to_string(low.shape()) + " vs " +
                     to_string(high.shape()));
  }
  const std::size_t m = low.shape().back();
  const std::size_t n = 2 * m;
  const std::size_t rows = low.size() / m;
  Shape shape = low.shape();
  shape.back() = n;
  Tensor out = detail::make_output(shape, {&low, &high});
  for (std::size_t r = 0; r < rows; ++r) {
    double* dst = out.mutable_data().data() + r * n;
    scatter(low.data().data() + r * m, n, filter.synthesis_low, dst);
    scatter(high.data().data() + r * m, n, filter.synthesis_high, dst);
  }
  detail::record("dwt_synthesize", out, [low, high, out, filter, rows, n, m] {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = out.grad().data() + r * n;
      if (low.requires_grad()) gather(g, n, filter.synthesis_low, low.mutable_grad().data() + r * m);
      if (high.requires_grad()) {
        gather(g, n, filter.synthesis_high, high.mutable_grad().data() + r * m);
      }
    }
  });
  return out;
}

}  // namespace karma::decomp
