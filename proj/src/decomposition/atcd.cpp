#include "karma/decomposition/atcd.hpp"

#include <cmath>

#include "karma/error.hpp"

namespace karma::decomp {

AtcdParams AtcdParams::init(std::size_t channels, std::size_t inner, std::size_t heads,
                            double dropout, Rng& rng) {
  if (channels == 0 || inner == 0 || heads == 0) {
    throw ConfigError("ATCD extents must be positive", "atcd_inner");
  }
  if (inner % heads != 0) {
    throw ConfigError("atcd_inner (" + std::to_string(inner) + ") must be divisible by atcd_heads (" +
                          std::to_string(heads) + ")",
                      "atcd_heads");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("atcd_dropout must lie in [0, 1)", "atcd_dropout");
  }
  AtcdParams p;
  p.channels = channels;
  p.inner = inner;
  p.heads = heads;
  p.dropout = dropout;
  const double bound = 1.0 / std::sqrt(static_cast<double>(inner));
  p.input = Linear::init(channels, inner, rng);
  p.w_q = uniform_parameter({inner, inner}, bound, rng);
  p.w_k = uniform_parameter({inner, inner}, bound, rng);
  p.w_v = uniform_parameter({inner, inner}, bound, rng);
  p.w_o = uniform_parameter({inner, inner}, bound, rng);
  p.out_trend = Linear::init(inner, channels, rng);
  p.out_seasonal = Linear::init(inner, channels, rng);
  return p;
}

Tensor mha(const Tensor& x, const AtcdParams& params, std::vector<Tensor>* attention) {
  if (x.shape().back() != params.inner) {
    throw ShapeError("mha: input " + to_string(x.shape()) + " does not have inner width " +
                     std::to_string(params.inner));
  }
  const std::size_t dn = params.head_dim();
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dn));
  Tensor q = matmul(x, params.w_q);
  Tensor k = matmul(x, params.w_k);
  Tensor v = matmul(x, params.w_v);
  std::vector<Tensor> heads;
  heads.reserve(params.heads);
  for (std::size_t h = 0; h < params.heads; ++h) {
    Tensor qh = slice_cols(q, h * dn, dn);
    Tensor kh = slice_cols(k, h * dn, dn);
    Tensor vh = slice_cols(v, h * dn, dn);
    Tensor weights;
    heads.push_back(karma::attention(qh, kh, vh, inv_scale, attention != nullptr ? &weights : nullptr));
    if (attention != nullptr) attention->push_back(weights);
  }
  return matmul(concat_cols(heads), params.w_o);
}

AtcdOutput atcd_forward(const Tensor& x_norm, const AtcdParams& params, Rng& rng, bool training) {
  if (x_norm.rank() < 2 || x_norm.shape().back() != params.channels) {
    throw ShapeError("atcd_forward: input " + to_string(x_norm.shape()) + " does not have " +
                     std::to_string(params.channels) + " channels");
  }
  AtcdOutput out;
  out.inner_input = dropout(params.input.forward(x_norm), params.dropout, rng, training);
  out.inner_trend = silu(mha(out.inner_input, params));
  out.inner_seasonal = sub(out.inner_input, out.inner_trend);
  out.trend = params.out_trend.forward(out.inner_trend);
  out.seasonal = params.out_seasonal.forward(out.inner_seasonal);
  return out;
}

}  // namespace karma::decomp
