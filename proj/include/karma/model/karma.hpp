#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "karma/decomposition/atcd.hpp"
#include "karma/decomposition/hftd.hpp"
#include "karma/model/config.hpp"
#include "karma/nn.hpp"
#include "karma/rng.hpp"
#include "karma/ssm/mamba.hpp"

namespace karma::model {

/// One refinement stage over the wavelet bands and the temporal residual.
struct KarmaBlockParams {
  ssm::SsmParams high;      // tokens D, width E_s / 2
  ssm::SsmParams low;       // tokens D, width E_s / 2
  ssm::SsmParams temporal;  // tokens D, width E_s; applied to rmsnorm(T_f) and T_b
  std::optional<ssm::SsmParams> temporal_bwd;  // only when the two temporal passes are unshared
  Tensor rms_gain;                             // E_s
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct KarmaModel {
  KarmaConfig config;
  decomp::AtcdParams atcd;
  Linear embed_seasonal;  // L -> E_s, applied per channel
  Linear embed_trend;     // L -> E_t
  Tensor hftd_gain;       // E_s, rmsnorm gain producing T_f
  std::vector<KarmaBlockParams> blocks;
  ssm::SsmParams global;  // tokens D, width E_t
  Linear head_seasonal;   // E_s -> T
  Linear head_trend;      // E_t -> T
  Tensor affine_weight;   // D, only with affine_norm
  Tensor affine_bias;     // D, only with affine_norm

  /// Every trainable tensor in a fixed order with a stable dotted name.
  std::vector<NamedTensor> parameters() const;
  std::size_t parameter_count() const;
  ssm::ScanConfig scan_config() const;
};

/// Validates the config and samples every parameter from `rng`.
KarmaModel init_parameters(const KarmaConfig& config, Rng& rng);

/// Closed-form parameter count; see README for the formula.
std::size_t parameter_count(const KarmaConfig& config);

/// Channels become rows: x_s, x_t [.. x L x D] -> ([.. x D x E_s], [.. x D x E_t]).
std::pair<Tensor, Tensor> embed_components(const Tensor& x_s, const Tensor& x_t,
                                           const KarmaModel& model);

/// F_h <- Mamba_HF(F_h); F_l <- Mamba_LF(F_l);
/// T_f <- Mamba_T(rmsnorm(T_f)) + Mamba_T(T_b) + T_f; T_b <- flip over channels of T_f.
/// With use_hftd false the bands are passed through untouched.
decomp::FreqComponents karma_block(const decomp::FreqComponents& f, const KarmaBlockParams& block,
                                   const KarmaModel& model);

/// Intermediate values captured by karma_forward when requested.
struct KarmaTrace {
  Tensor normalized;              // [.. x L x D]
  decomp::AtcdOutput atcd;        // empty when use_atcd is false
  Tensor seasonal_embedding;      // [.. x D x E_s]
  Tensor trend_embedding;         // [.. x D x E_t]
  decomp::FreqComponents initial; // before the first block
  decomp::FreqComponents final;   // after the last block
  Tensor seasonal_output;         // [.. x T x D], normalized scale
  Tensor trend_output;            // [.. x T x D], normalized scale
};

/// Full forecast: x [L x D] or [B x L x D] -> [T x D] or [B x T x D] on the input scale.
Tensor karma_forward(const Tensor& x, const KarmaModel& model, Rng& rng, bool training,
                     KarmaTrace* trace = nullptr);

}  // namespace karma::model
