#pragma once

#include <cstddef>
#include <vector>

#include "karma/rng.hpp"
#include "karma/tensor.hpp"

namespace karma::ssm {

/// Zero-order-hold coefficients, elementwise: a_bar = exp(dA), b_bar = phi(dA) * d * B
/// with phi(z) = (exp(z) - 1) / z.
struct Discretized {
  Tensor a_bar;
  Tensor b_bar;
};

/// Elementwise ZOH for a diagonal system. All three tensors share one shape; delta must be
/// positive and A negative everywhere (ContractError otherwise).
Discretized discretize(const Tensor& delta, const Tensor& a, const Tensor& b);

/// phi(z) = expm1(z) / z, switching to its Taylor series for |z| < 1e-6.
double zoh_phi(double z);
/// d phi / dz, series below |z| < 1e-2.
double zoh_phi_prime(double z);

/// Hidden state of one sequence: inner x state entries, row-major.
struct ScanState {
  std::vector<double> h;
  std::size_t t = 0;

  ScanState(std::size_t inner, std::size_t state) : h(inner * state, 0.0) {}
};

/// A discretized recurrence h_t = a_bar_t * h_{t-1} + b_bar_t * u_t, y_t = <c_t, h_t> + d * u_t.
/// a_bar, b_bar: [steps][inner][state]; u: [steps][inner]; c: [steps][state]; d: [inner];
/// h0: [inner][state], empty for a zero initial state.
struct ScanProblem {
  std::size_t steps = 0;
  std::size_t inner = 0;
  std::size_t state = 0;
  std::vector<double> a_bar;
  std::vector<double> b_bar;
  std::vector<double> u;
  std::vector<double> c;
  std::vector<double> d;
  std::vector<double> h0;

  void validate() const;
};

/// Left-to-right recurrence from h0. Returns y [steps][inner]; when `states` is non-null
/// it receives every h_t, [steps][inner][state], and `last` receives h_steps.
std::vector<double> scan_sequential(const ScanProblem& p, std::vector<double>* states = nullptr,
                                    std::vector<double>* last = nullptr);

/// Same recurrence evaluated by composing the affine maps h -> a h + b chunk by chunk, then
/// replaying each chunk from its carried-in state. chunk == 0 is a ContractError.
std::vector<double> scan_chunked(const ScanProblem& p, std::size_t chunk,
                                 std::vector<double>* states = nullptr, std::vector<double>* last = nullptr);

enum class ScanMode { sequential, chunked };

struct ScanConfig {
  ScanMode mode = ScanMode::sequential;
  std::size_t chunk = 16;
};

/// Fused selective scan with its own reverse-time adjoint.
///   u, delta: [.. x T x di]   a_log: [di x N]   b, c: [.. x T x N]   d_skip: [di]
/// A = -exp(a_log); output [.. x T x di].
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a_log, const Tensor& b,
                      const Tensor& c, const Tensor& d_skip, ScanConfig config = {});

/// Depthwise causal convolution along the token axis with left zero padding.
///   x: [.. x T x C]  weight: [C x K]  bias: [C]
///   out[t, c] = bias[c] + sum_k weight[c, k] * x[t - K + 1 + k, c]
Tensor causal_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct SsmParams {
  std::size_t d_in = 0;
  std::size_t d_inner = 0;
  std::size_t d_state = 0;
  std::size_t d_conv = 0;
  std::size_t dt_rank = 0;

  Tensor in_proj;      // d_in x 2 d_inner, no bias; columns [0, di) stream, [di, 2di) gate
  Tensor conv_weight;  // d_inner x d_conv
  Tensor conv_bias;    // d_inner
  Tensor x_proj_bc;    // d_inner x 2N; columns [0, N) give B, [N, 2N) give C
  Tensor dt_down;      // d_inner x dt_rank
  Tensor dt_up;        // dt_rank x d_inner
  Tensor dt_bias;      // d_inner
  Tensor a_log;        // d_inner x N
  Tensor d_skip;       // d_inner
  Tensor out_proj;     // d_inner x d_in, no bias

  /// dt_rank = ceil(d_in / 16). A_log row i = log(1..N); softplus(dt_bias) log-uniform in
  /// [1e-3, 1e-1]; D = 1; remaining weights uniform(+-1/sqrt(fan_in)).
  static SsmParams init(std::size_t d_in, std::size_t d_state, std::size_t d_conv,
                        std::size_t expand, Rng& rng);

  /// Closed-form number of scalars for the given widths.
  static std::size_t count(std::size_t d_in, std::size_t d_state, std::size_t d_conv,
                           std::size_t expand);

  /// Handles share storage with the fields, in the order of tensor_names().
  std::vector<Tensor> tensors() const;
  std::vector<const char*> tensor_names() const;
};

/// x: [tokens x d_in] or [B x tokens x d_in]; shape preserved.
Tensor mamba_forward(const Tensor& x, const SsmParams& params, ScanConfig config = {});

}  // namespace karma::ssm
