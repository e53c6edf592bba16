#include "karma/ops.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <limits>
#include <cmath>
#include <map>
#include <numbers>
#include <string>

#include "karma/error.hpp"

namespace karma {
namespace {

using detail::make_output;
using detail::record;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

using v4 = double __attribute__((vector_size(32)));

inline void load4(v4& r, const double* p) { std::memcpy(&r, p, sizeof r); }
inline void store4(double* p, const v4& v) { std::memcpy(p, &v, sizeof v); }

// C[m x n] += A[m x k] * B[k x n] in register tiles of 4 rows x 8 columns. Every element
// accumulates over k in order. No FMA in the clone list.
__attribute__((target_clones("avx2", "default")))
void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
             std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = A + i * k;
    const double* a1 = a0 + k;
    const double* a2 = a1 + k;
    const double* a3 = a2 + k;
    double* c0 = C + i * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      v4 x0, y0, x1, y1, x2, y2, x3, y3;
      load4(x0, c0 + j), load4(y0, c0 + j + 4), load4(x1, c1 + j), load4(y1, c1 + j + 4);
      load4(x2, c2 + j), load4(y2, c2 + j + 4), load4(x3, c3 + j), load4(y3, c3 + j + 4);
      for (std::size_t p = 0; p < k; ++p) {
        v4 bx, by;
        load4(bx, B + p * n + j);
        load4(by, B + p * n + j + 4);
        const v4 s0 = v4{} + a0[p], s1 = v4{} + a1[p], s2 = v4{} + a2[p], s3 = v4{} + a3[p];
        x0 += s0 * bx, y0 += s0 * by;
        x1 += s1 * bx, y1 += s1 * by;
        x2 += s2 * bx, y2 += s2 * by;
        x3 += s3 * bx, y3 += s3 * by;
      }
      store4(c0 + j, x0), store4(c0 + j + 4, y0), store4(c1 + j, x1), store4(c1 + j + 4, y1);
      store4(c2 + j, x2), store4(c2 + j + 4, y2), store4(c3 + j, x3), store4(c3 + j + 4, y3);
    }
    for (; j < n; ++j) {
      for (std::size_t r = 0; r < 4; ++r) {
        double acc = C[(i + r) * n + j];
        for (std::size_t p = 0; p < k; ++p) acc += A[(i + r) * k + p] * B[p * n + j];
        C[(i + r) * n + j] = acc;
      }
    }
  }
  for (; i < m; ++i) {
    double* c = C + i * n;
    const double* a = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p];
      const double* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

__attribute__((target_clones("avx2", "default")))
double row_max(const double* x, std::size_t n) {
  double lane[8];
  std::fill(lane, lane + 8, -std::numeric_limits<double>::infinity());
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8)
    for (std::size_t c = 0; c < 8; ++c) lane[c] = x[j + c] > lane[c] ? x[j + c] : lane[c];
  double mx = lane[0];
  for (std::size_t c = 1; c < 8; ++c) mx = lane[c] > mx ? lane[c] : mx;
  for (; j < n; ++j) mx = x[j] > mx ? x[j] : mx;
  return mx;
}

// Eight interleaved partial sums, combined in lane order.
__attribute__((target_clones("avx2", "default")))
double row_sum(const double* x, std::size_t n) {
  double lane[8] = {};
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8)
    for (std::size_t c = 0; c < 8; ++c) lane[c] += x[j + c];
  double z = ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
  for (; j < n; ++j) z += x[j];
  return z;
}

// C[m x k] += G[m x n] * B[k x n]^T
__attribute__((target_clones("avx2", "default")))
void gemm_nt(const double* G, const double* B, double* C, std::size_t m, std::size_t n,
             std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* g = G + i * n;
    double* c = C + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* b = B + p * n;
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        s0 += g[j] * b[j];
        s1 += g[j + 1] * b[j + 1];
        s2 += g[j + 2] * b[j + 2];
        s3 += g[j + 3] * b[j + 3];
      }
      for (; j < n; ++j) s0 += g[j] * b[j];
      c[p] += (s0 + s1) + (s2 + s3);
    }
  }
}

// C[k x n] += A[m x k]^T * G[m x n]. Four rows of A per sweep over C, added in row order.
__attribute__((target_clones("avx2", "default")))
void gemm_tn(const double* A, const double* G, double* C, std::size_t m, std::size_t k,
             std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = A + i * k;
    const double* a1 = a0 + k;
    const double* a2 = a1 + k;
    const double* a3 = a2 + k;
    const double* g0 = G + i * n;
    const double* g1 = g0 + n;
    const double* g2 = g1 + n;
    const double* g3 = g2 + n;
    for (std::size_t p = 0; p < k; ++p) {
      const double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
      double* c = C + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] = (((c[j] + v0 * g0[j]) + v1 * g1[j]) + v2 * g2[j]) + v3 * g3[j];
    }
  }
  for (; i < m; ++i) {
    const double* a = A + i * k;
    const double* g = G + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p];
      double* c = C + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * g[j];
    }
  }
}

// y[j] = exp(x[j] - shift) for arguments <= 0, within a few ulp of std::exp. Branch-free;
// results below exp(-708) flush to zero.
__attribute__((target_clones("avx2", "default")))
void exp_shifted(double* y, std::size_t n, double shift) {
  constexpr double log2e = 1.4426950408889634;
  constexpr double ln2_hi = 6.93147180369123816490e-01;
  constexpr double ln2_lo = 1.90821492927058770002e-10;
  constexpr double shifter = 0x1.8p52;
  constexpr std::int64_t shifter_bits = 0x4338000000000000;
  for (std::size_t j = 0; j < n; ++j) {
    const double raw = y[j] - shift;
    const double x = raw < -708.0 ? -708.0 : raw;
    const double t = x * log2e + shifter;
    const double k = t - shifter;
    const double r = (x - k * ln2_hi) - k * ln2_lo;
    double p = 1.0 / 6227020800.0;
    p = p * r + 1.0 / 479001600.0;
    p = p * r + 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    const std::int64_t e = (std::bit_cast<std::int64_t>(t) - shifter_bits + 1023) << 52;
    const double v = p * std::bit_cast<double>(e);
    y[j] = raw < -708.0 ? 0.0 : v;
  }
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, Deriv deriv) {
  Tensor out = make_output(x.shape(), {&x});
  auto xs = x.data();
  auto ys = out.mutable_data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = fwd(xs[i]);
  record(name, out, [x, out, deriv] {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    auto g = out.grad();
    auto xs = x.data();
    auto ys = out.data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * deriv(xs[i], ys[i]);
  });
  return out;
}

Shape with_last(const Shape& s, std::size_t last) {
  Shape r = s;
  r.back() = last;
  return r;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto fail = [&] {
    throw ShapeError("matmul: dimension mismatch " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  };
  if (a.rank() < 2 || b.rank() < 2) fail();
  const std::size_t k = a.shape().back();
  if (b.rank() == 2) {
    if (b.dim(0) != k) fail();
    const std::size_t n = b.dim(1);
    const std::size_t m = a.size() / k;
    Tensor out = make_output(with_last(a.shape(), n), {&a, &b});
    gemm_nn(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n);
    record("matmul", out, [a, b, out, m, k, n] {
      const double* g = out.grad().data();
      if (a.requires_grad()) gemm_nt(g, b.data().data(), a.mutable_grad().data(), m, n, k);
      if (b.requires_grad()) gemm_tn(a.data().data(), g, b.mutable_grad().data(), m, k, n);
    });
    return out;
  }
  if (a.rank() != 3 || b.dim(0) != a.dim(0) || b.dim(1) != k) fail();
  const std::size_t batch = a.dim(0), m = a.dim(1), n = b.dim(2);
  Tensor out = make_output({batch, m, n}, {&a, &b});
  for (std::size_t s = 0; s < batch; ++s) {
    gemm_nn(a.data().data() + s * m * k, b.data().data() + s * k * n,
            out.mutable_data().data() + s * m * n, m, k, n);
  }
  record("bmm", out, [a, b, out, batch, m, k, n] {
    for (std::size_t s = 0; s < batch; ++s) {
      const double* g = out.grad().data() + s * m * n;
      if (a.requires_grad()) {
        gemm_nt(g, b.data().data() + s * k * n, a.mutable_grad().data() + s * m * k, m, n, k);
      }
      if (b.requires_grad()) {
        gemm_tn(a.data().data() + s * m * k, g, b.mutable_grad().data() + s * k * n, m, k, n);
      }
    }
  });
  return out;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose needs rank >= 2, got " + to_string(x.shape()));
  const auto [batch, m, n] = x.extents();
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  Tensor out = make_output(shape, {&x});
  auto xs = x.data();
  auto ys = out.mutable_data();
  for (std::size_t s = 0; s < batch; ++s) {
    const std::size_t off = s * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ys[off + j * m + i] = xs[off + i * n + j];
  }
  record("transpose", out, [x, out, batch, m, n] {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    auto g = out.grad();
    for (std::size_t s = 0; s < batch; ++s) {
      const std::size_t off = s * m * n;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[off + i * n + j] += g[off + j * m + i];
    }
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (element_count(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  Tensor out = make_output(std::move(shape), {&x});
  std::copy(x.data().begin(), x.data().end(), out.mutable_data().begin());
  record("reshape", out, [x, out] {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    auto g = out.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out = make_output(a.shape(), {&a, &b});
  auto ys = out.mutable_data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = a[i] + b[i];
  record("add", out, [a, b, out] {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Tensor out = make_output(a.shape(), {&a, &b});
  auto ys = out.mutable_data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = a[i] - b[i];
  record("sub", out, [a, b, out] {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out = make_output(a.shape(), {&a, &b});
  auto ys = out.mutable_data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = a[i] * b[i];
  record("mul", out, [a, b, out] {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return factor * v; },
      [factor](double, double) { return factor; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.shape().back();
  if (bias.rank() != 1 || bias.size() != n) {
    throw ShapeError("add_bias: bias " + to_string(bias.shape()) + " does not match " +
                     to_string(x.shape()));
  }
  Tensor out = make_output(x.shape(), {&x, &bias});
  auto ys = out.mutable_data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = x[i] + bias[i % n];
  record("add_bias", out, [x, bias, out, n] {
    auto g = out.grad();
    if (x.requires_grad()) {
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bias.requires_grad()) {
      auto gb = bias.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
    }
  });
  return out;
}

Tensor mul_cols(const Tensor& x, const Tensor& w) {
  const std::size_t n = x.shape().back();
  if (w.rank() != 1 || w.size() != n) {
    throw ShapeError("mul_cols: weights " + to_string(w.shape()) + " do not match " +
                     to_string(x.shape()));
  }
  Tensor out = make_output(x.shape(), {&x, &w});
  auto ys = out.mutable_data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = x[i] * w[i % n];
  record("mul_cols", out, [x, w, out, n] {
    auto g = out.grad();
    if (x.requires_grad()) {
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * w[i % n];
    }
    if (w.requires_grad()) {
      auto gw = w.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gw[i % n] += g[i] * x[i];
    }
  });
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = make_output({1}, {&x});
  double s = 0.0;
  for (double v : x.data()) s += v;
  out.mutable_data()[0] = s;
  record("sum", out, [x, out] {
    if (!x.requires_grad()) return;
    const double g = out.grad()[0];
    for (double& v : x.mutable_grad()) v += g;
  });
  return out;
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor reciprocal(const Tensor& x) {
  for (double v : x.data()) {
    if (v == 0.0) throw ContractError("reciprocal: zero entry");
  }
  return unary(
      "reciprocal", x, [](double v) { return 1.0 / v; }, [](double, double y) { return -y * y; });
}

Tensor silu(const Tensor& x) {
  return unary(
      "silu", x, [](double v) { return v * sigmoid(v); },
      [](double v, double) {
        const double s = sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor softplus(const Tensor& x) {
  return unary(
      "softplus", x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) { return sigmoid(v); });
}

Tensor softmax_rows(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  Tensor out = make_output(x.shape(), {&x});
  auto xs = x.data();
  auto ys = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xs.data() + r * n;
    double* yr = ys.data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < n; ++j) yr[j] *= inv;
  }
  record("softmax_rows", out, [x, out, rows, n] {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    auto g = out.grad();
    auto ys = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t off = r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[off + j] * ys[off + j];
      for (std::size_t j = 0; j < n; ++j) gx[off + j] += ys[off + j] * (g[off + j] - dot);
    }
  });
  return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale, Tensor* weights) {
  const bool batched = q.rank() == 3;
  if ((q.rank() != 2 && !batched) || k.rank() != q.rank() || v.rank() != q.rank() ||
      q.shape().back() != k.shape().back() || k.dim(k.rank() - 2) != v.dim(v.rank() - 2) ||
      (batched && (k.dim(0) != q.dim(0) || v.dim(0) != q.dim(0)))) {
    throw ShapeError("attention: incompatible q " + to_string(q.shape()) + ", k " + to_string(k.shape()) +
                     ", v " + to_string(v.shape()));
  }
  const std::size_t batch = batched ? q.dim(0) : 1;
  const std::size_t n = q.dim(q.rank() - 2), d = q.shape().back();
  const std::size_t m = k.dim(k.rank() - 2), e = v.shape().back();
  Shape out_shape = q.shape();
  out_shape.back() = e;
  Tensor out = make_output(out_shape, {&q, &k, &v});
  const bool keep = out.requires_grad() || weights != nullptr;
  Shape w_shape = q.shape();
  w_shape.back() = m;
  std::vector<double> w_all(keep ? batch * n * m : 0);

  // Query rows in blocks of 16.
  constexpr std::size_t block = 16;
  std::vector<double> local(keep ? 0 : block * m);
  std::vector<double> kt(d * m);
  const double* qs = q.data().data();
  const double* ks = k.data().data();
  const double* vs = v.data().data();
  double* os = out.mutable_data().data();
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t c = 0; c < d; ++c) kt[c * m + j] = ks[(s * m + j) * d + c];
    for (std::size_t r0 = 0; r0 < n; r0 += block) {
      const std::size_t rows = std::min(block, n - r0);
      double* sc = keep ? w_all.data() + (s * n + r0) * m : local.data();
      std::fill(sc, sc + rows * m, 0.0);
      gemm_nn(qs + (s * n + r0) * d, kt.data(), sc, rows, d, m);
      for (std::size_t r = 0; r < rows; ++r) {
        double* row = sc + r * m;
        for (std::size_t j = 0; j < m; ++j) row[j] *= scale;
        exp_shifted(row, m, row_max(row, m));
        const double inv = 1.0 / row_sum(row, m);
        for (std::size_t j = 0; j < m; ++j) row[j] *= inv;
      }
      gemm_nn(sc, vs + s * m * e, os + (s * n + r0) * e, rows, m, e);
    }
  }
  if (weights != nullptr) *weights = Tensor::from_data(w_shape, w_all);
  record("attention", out, [q, k, v, out, scale, batch, n, m, d, e, w = std::move(w_all)] {
    const double* g = out.grad().data();
    std::vector<double> dw(n * m);
    for (std::size_t s = 0; s < batch; ++s) {
      const double* ws = w.data() + s * n * m;
      const double* gs = g + s * n * e;
      std::fill(dw.begin(), dw.end(), 0.0);
      gemm_nt(gs, v.data().data() + s * m * e, dw.data(), n, e, m);
      for (std::size_t i = 0; i < n; ++i) {
        double* row = dw.data() + i * m;
        const double* wr = ws + i * m;
        double dot = 0.0;
        for (std::size_t j = 0; j < m; ++j) dot += row[j] * wr[j];
        for (std::size_t j = 0; j < m; ++j) row[j] = wr[j] * (row[j] - dot) * scale;
      }
      if (q.requires_grad()) {
        gemm_nn(dw.data(), k.data().data() + s * m * d, q.mutable_grad().data() + s * n * d, n, m, d);
      }
      if (k.requires_grad()) {
        gemm_tn(dw.data(), q.data().data() + s * n * d, k.mutable_grad().data() + s * m * d, n, m, d);
      }
      if (v.requires_grad()) gemm_tn(ws, gs, v.mutable_grad().data() + s * m * e, n, m, e);
    }
  });
  return out;
}

Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps) {
  if (eps < 0.0) throw ContractError("rmsnorm: eps must be nonnegative");
  const std::size_t n = x.shape().back();
  if (gain.rank() != 1 || gain.size() != n) {
    throw ShapeError("rmsnorm: gain " + to_string(gain.shape()) + " does not match " +
                     to_string(x.shape()));
  }
  const std::size_t rows = x.size() / n;
  Tensor out = make_output(x.shape(), {&x, &gain});
  std::vector<double> inv_rms(rows);
  auto xs = x.data();
  auto ys = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += xs[r * n + j] * xs[r * n + j];
    const double rms = std::sqrt(ss / static_cast<double>(n) + eps);
    // A zero row with eps == 0 has nothing to normalise.
    inv_rms[r] = rms > 0.0 ? 1.0 / rms : 0.0;
    for (std::size_t j = 0; j < n; ++j) ys[r * n + j] = xs[r * n + j] * inv_rms[r] * gain[j];
  }
  record("rmsnorm", out, [x, gain, out, rows, n, inv_rms = std::move(inv_rms)] {
    auto g = out.grad();
    auto xs = x.data();
    if (gain.requires_grad()) {
      auto gg = gain.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gg[j] += g[r * n + j] * xs[r * n + j] * inv_rms[r];
    }
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double ir = inv_rms[r];
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * gain[j] * xs[r * n + j] * ir;
      dot /= static_cast<double>(n);
      for (std::size_t j = 0; j < n; ++j) {
        const double dxhat = g[r * n + j] * gain[j];
        gx[r * n + j] += (dxhat - xs[r * n + j] * ir * dot) * ir;
      }
    }
  });
  return out;
}

Tensor flip_axis0(const Tensor& x) {
  const auto [batch, m, n] = x.extents();
  Tensor out = make_output(x.shape(), {&x});
  auto xs = x.data();
  auto ys = out.mutable_data();
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>((s * m + i) * n), n,
                  ys.begin() + static_cast<std::ptrdiff_t>((s * m + (m - 1 - i)) * n));
  record("flip_axis0", out, [x, out, batch = batch, m = m, n = n] {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    auto g = out.grad();
    for (std::size_t s = 0; s < batch; ++s)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          gx[(s * m + i) * n + j] += g[(s * m + (m - 1 - i)) * n + j];
  });
  return out;
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p),
                      "atcd_dropout");
  }
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  for (double& m : mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  Tensor out = make_output(x.shape(), {&x});
  auto ys = out.mutable_data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = x[i] * mask[i];
  record("dropout", out, [x, out, mask = std::move(mask)] {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    auto g = out.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * mask[i];
  });
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  const std::size_t n = x.shape().back();
  if (count == 0 || begin + count > n) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " + to_string(x.shape()));
  }
  const std::size_t rows = x.size() / n;
  Tensor out = make_output(with_last(x.shape(), count), {&x});
  auto xs = x.data();
  auto ys = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < count; ++j) ys[r * count + j] = xs[r * n + begin + j];
  record("slice_cols", out, [x, out, rows, n, begin, count] {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    auto g = out.grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < count; ++j) gx[r * n + begin + j] += g[r * count + j];
  });
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    Shape l = p.shape();
    l.pop_back();
    if (l != lead) {
      throw ShapeError("concat_cols: leading extents differ: " + to_string(parts[0].shape()) +
                       " vs " + to_string(p.shape()));
    }
    total += p.shape().back();
  }
  Shape shape = lead;
  shape.push_back(total);
  const std::size_t rows = element_count(shape) / total;
  Tensor out = make_output(shape, parts);
  auto ys = out.mutable_data();
  std::size_t col = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.shape().back();
    auto xs = p.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) ys[r * total + col + j] = xs[r * w + j];
    col += w;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  record("concat_cols", out, [inputs = std::move(inputs), out, rows, total] {
    auto g = out.grad();
    std::size_t col = 0;
    for (const Tensor& p : inputs) {
      const std::size_t w = p.shape().back();
      if (p.requires_grad()) {
        auto gp = p.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < w; ++j) gp[r * w + j] += g[r * total + col + j];
      }
      col += w;
    }
  });
  return out;
}

namespace {

struct DftBasis {
  Tensor cos;
  Tensor sin;
};

const DftBasis& dft_basis(std::size_t n) {
  thread_local std::map<std::size_t, DftBasis> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  const std::size_t bins = n / 2 + 1;
  std::vector<double> c(n * bins), s(n * bins);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t k = 0; k < bins; ++k) {
      // k*t reduced modulo n before scaling.
      const double angle = 2.0 * std::numbers::pi * static_cast<double>((k * t) % n) /
                           static_cast<double>(n);
      c[t * bins + k] = std::cos(angle);
      s[t * bins + k] = -std::sin(angle);
    }
  }
  DftBasis basis{Tensor::from_data({n, bins}, std::move(c)),
                 Tensor::from_data({n, bins}, std::move(s))};
  return cache.emplace(n, std::move(basis)).first->second;
}

}  // namespace

const Tensor& dft_cos_matrix(std::size_t n) { return dft_basis(n).cos; }
const Tensor& dft_sin_matrix(std::size_t n) { return dft_basis(n).sin; }

Spectrum dft_apply(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const DftBasis& basis = dft_basis(n);
  if (x.rank() == 1) {
    Tensor row = reshape(x, {1, n});
    Tensor re = matmul(row, basis.cos);
    Tensor im = matmul(row, basis.sin);
    const std::size_t bins = n / 2 + 1;
    return {reshape(re, {bins}), reshape(im, {bins})};
  }
  return {matmul(x, basis.cos), matmul(x, basis.sin)};
}

Tensor complex_abs(const Tensor& re, const Tensor& im) {
  require_same_shape("complex_abs", re, im);
  Tensor out = make_output(re.shape(), {&re, &im});
  auto ys = out.mutable_data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = std::hypot(re[i], im[i]);
  record("complex_abs", out, [re, im, out] {
    auto g = out.grad();
    auto ys = out.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (ys[i] == 0.0) continue;
      const double inv = g[i] / ys[i];
      if (re.requires_grad()) re.mutable_grad()[i] += inv * re[i];
      if (im.requires_grad()) im.mutable_grad()[i] += inv * im[i];
    }
  });
  return out;
}

}  // namespace karma
