#pragma once

#include <vector>

#include "karma/nn.hpp"
#include "karma/rng.hpp"
#include "karma/tensor.hpp"

namespace karma::decomp {

/// Parameters of the attention-based trend/seasonal split.
///
/// Inputs are [L x D] (or [B x L x D]); attention runs over the L time steps and
/// channel mixing happens in the D -> I input projection. Head h of w_q, w_k and
/// w_v is the column block [h * head_dim, (h + 1) * head_dim).
struct AtcdParams {
  std::size_t channels = 0;
  std::size_t inner = 0;
  std::size_t heads = 1;
  double dropout = 0.1;

  Linear input;  // D -> I with bias
  Tensor w_q;    // I x I
  Tensor w_k;    // I x I
  Tensor w_v;    // I x I
  Tensor w_o;    // I x I
  Linear out_trend;     // I -> D with bias
  Linear out_seasonal;  // I -> D with bias

  std::size_t head_dim() const { return inner / heads; }

  /// Validates I % H == 0 and p in [0, 1), then samples uniform(+-1/sqrt(fan_in)) weights.
  static AtcdParams init(std::size_t channels, std::size_t inner, std::size_t heads,
                         double dropout, Rng& rng);
};

struct AtcdOutput {
  Tensor trend;           // [.. x L x D]
  Tensor seasonal;        // [.. x L x D]
  Tensor inner_input;     // dropout(x W_in + b), [.. x L x I]
  Tensor inner_trend;     // silu(MHA(inner_input))
  Tensor inner_seasonal;  // inner_input - inner_trend
};

/// Concat_h(softmax(Q_h K_h^T / sqrt(d_n)) V_h) W_O. When `attention` is non-null the
/// per-head attention matrices are appended to it.
Tensor mha(const Tensor& x, const AtcdParams& params, std::vector<Tensor>* attention = nullptr);

/// Trend/seasonal split of a normalized window.
AtcdOutput atcd_forward(const Tensor& x_norm, const AtcdParams& params, Rng& rng, bool training);

}  // namespace karma::decomp
