#include "karma/model/normalization.hpp"

#include <algorithm>
#include <cmath>

#include "karma/error.hpp"

namespace karma::model {

std::pair<Tensor, NormStats> instance_normalize(const Tensor& x, double eps) {
  const auto [batch, len, ch] = x.extents();
  if (x.rank() < 2) throw ShapeError("instance_normalize: need [L x D] input, got " + to_string(x.shape()));
  if (len < 2) throw ShapeError("instance_normalize: lookback must be at least 2, got " + std::to_string(len));
  if (!(eps > 0.0)) throw ContractError("instance_normalize: eps must be positive");
  NormStats stats{batch, ch, std::vector<double>(batch * ch, 0.0), std::vector<double>(batch * ch, 0.0), eps};
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_data();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * len * ch;
    for (std::size_t d = 0; d < ch; ++d) {
      double m = 0.0;
      for (std::size_t t = 0; t < len; ++t) m += x[base + t * ch + d];
      m /= static_cast<double>(len);
      double var = 0.0;
      for (std::size_t t = 0; t < len; ++t) {
        const double e = x[base + t * ch + d] - m;
        var += e * e;
      }
      const double s = std::max(std::sqrt(var / static_cast<double>(len)), eps);
      stats.mean[b * ch + d] = m;
      stats.std[b * ch + d] = s;
      for (std::size_t t = 0; t < len; ++t) o[base + t * ch + d] = (x[base + t * ch + d] - m) / s;
    }
  }
  return {out, std::move(stats)};
}

Tensor instance_denormalize(const Tensor& y, const NormStats& stats) {
  const auto [batch, len, ch] = y.extents();
  if (ch != stats.channels || batch != stats.batch) {
    throw ShapeError("instance_denormalize: " + to_string(y.shape()) + " does not match stats for " +
                     std::to_string(stats.batch) + " windows of " + std::to_string(stats.channels) +
                     " channels");
  }
  Tensor out = detail::make_output(y.shape(), {&y});
  auto o = out.mutable_data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t d = 0; d < ch; ++d) {
        const std::size_t i = (b * len + t) * ch + d;
        o[i] = y[i] * stats.std[b * ch + d] + stats.mean[b * ch + d];
      }
  detail::record("instance_denormalize", out, [y, out, std = stats.std, batch, len, ch] {
    auto g = out.grad();
    auto gy = y.mutable_grad();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < len; ++t)
        for (std::size_t d = 0; d < ch; ++d) {
          const std::size_t i = (b * len + t) * ch + d;
          gy[i] += g[i] * std[b * ch + d];
        }
  });
  return out;
}

}  // namespace karma::model
