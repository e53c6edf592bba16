#pragma once

#include <span>

#include "karma/rng.hpp"
#include "karma/tensor.hpp"

namespace karma {

// Differentiable primitives. Every function records its backward on the active tape
// when an input requires a gradient; without a tape they are plain array functions.

/// [m x k] * [k x n]. A rank-3 left operand multiplies each batch item by a shared
/// rank-2 right operand; two rank-3 operands with equal batch multiply item by item.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Swaps the last two axes (rank 2 or 3).
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

/// x + bias, bias of length cols broadcast over every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// x * w column-wise, w of length cols broadcast over every row.
Tensor mul_cols(const Tensor& x, const Tensor& w);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor square(const Tensor& x);
Tensor exp(const Tensor& x);
/// 1 / x; a zero entry is a ContractError.
Tensor reciprocal(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor softplus(const Tensor& x);

/// Row-wise softmax over the last axis, stabilised by subtracting the row maximum.
Tensor softmax_rows(const Tensor& x);

/// softmax(q k^T * scale) v for q [.. n x d], k [.. m x d], v [.. m x e]; rank 2 or 3.
/// `weights`, when given, receives the [.. n x m] attention matrix (untracked).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale, Tensor* weights = nullptr);

/// Each row divided by sqrt(mean(row^2) + eps), then scaled by `gain`.
Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps);

/// Reverses row order. For rank-3 input the rows of each batch item are reversed.
Tensor flip_axis0(const Tensor& x);

/// Inverted dropout. Identity when `training` is false or p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool training);

/// Columns [begin, begin + count) of the last axis.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
/// Concatenation along the last axis; leading extents must agree.
Tensor concat_cols(std::span<const Tensor> parts);

struct Spectrum {
  Tensor re;
  Tensor im;
};

/// One-sided real DFT along the last axis, bins 0..n/2, computed as products with
/// fixed cosine and sine matrices. Backward is the transposed product.
Spectrum dft_apply(const Tensor& x);

/// Elementwise sqrt(re^2 + im^2). The gradient at a zero modulus is taken as zero.
Tensor complex_abs(const Tensor& re, const Tensor& im);

/// Real DFT basis matrices of shape [n x (n/2 + 1)]: cos(2 pi k t / n) and -sin(2 pi k t / n).
const Tensor& dft_cos_matrix(std::size_t n);
const Tensor& dft_sin_matrix(std::size_t n);

}  // namespace karma
