#pragma once

// Straight-line reference implementations used as test oracles. They work on
// nested std::vector matrices and never call into the autodiff primitives.

#include <cmath>
#include <vector>

#include "karma/ssm/mamba.hpp"
#include "karma/tensor.hpp"

namespace karma::reference {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor& t, std::size_t batch_item = 0) {
  const auto [b, m, n] = t.extents();
  (void)b;
  Mat r(m, std::vector<double>(n));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) r[i][j] = t[(batch_item * m + i) * n + j];
  return r;
}

inline std::vector<double> to_vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline Mat zeros(std::size_t m, std::size_t n) { return Mat(m, std::vector<double>(n, 0.0)); }

inline Mat mm(const Mat& a, const Mat& b) {
  Mat c = zeros(a.size(), b[0].size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < b.size(); ++p) s += a[i][p] * b[p][j];
      c[i][j] = s;
    }
  return c;
}

inline Mat tr(const Mat& a) {
  Mat t = zeros(a[0].size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
  return t;
}

inline Mat plus_bias(Mat a, const std::vector<double>& b) {
  for (auto& row : a)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  return a;
}

inline Mat cols(const Mat& a, std::size_t begin, std::size_t count) {
  Mat r = zeros(a.size(), count);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < count; ++j) r[i][j] = a[i][begin + j];
  return r;
}

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sig(x); }
inline double softplus(double x) { return std::log(1.0 + std::exp(x)); }

inline Mat softmax(Mat a) {
  for (auto& row : a) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      z += v;
    }
    for (double& v : row) v /= z;
  }
  return a;
}

inline Mat rmsnorm(const Mat& a, const std::vector<double>& gain, double eps) {
  Mat r = a;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double ss = 0.0;
    for (double v : a[i]) ss += v * v;
    const double rms = std::sqrt(ss / static_cast<double>(a[i].size()) + eps);
    for (std::size_t j = 0; j < a[i].size(); ++j) r[i][j] = a[i][j] / rms * gain[j];
  }
  return r;
}

inline Mat flip_rows(const Mat& a) { return Mat(a.rbegin(), a.rend()); }

inline Mat add(const Mat& a, const Mat& b) {
  Mat r = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) r[i][j] += b[i][j];
  return r;
}


// Mamba block on one [tokens x d_in] sequence, evaluated token by token with the
// textbook ZOH formulas.
inline Mat mamba(const Mat& x, const ssm::SsmParams& p) {
  const std::size_t T = x.size(), di = p.d_inner, N = p.d_state, K = p.d_conv;
  Mat xz = mm(x, to_mat(p.in_proj));
  Mat s = cols(xz, 0, di), g = cols(xz, di, di);
  auto w = to_mat(p.conv_weight);
  auto cb = to_vec(p.conv_bias);
  Mat u = zeros(T, di);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < di; ++j) {
      double acc = cb[j];
      for (std::size_t k = 0; k < K; ++k) {
        const long src = static_cast<long>(t) - static_cast<long>(K) + 1 + static_cast<long>(k);
        if (src >= 0) acc += w[j][k] * s[static_cast<std::size_t>(src)][j];
      }
      u[t][j] = silu(acc);
    }
  Mat bc = mm(u, to_mat(p.x_proj_bc));
  Mat dt = plus_bias(mm(mm(u, to_mat(p.dt_down)), to_mat(p.dt_up)), to_vec(p.dt_bias));
  auto alog = to_mat(p.a_log);
  auto dsk = to_vec(p.d_skip);
  Mat h = zeros(di, N);
  Mat y = zeros(T, di);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < di; ++j) {
      const double delta = softplus(dt[t][j]);
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double a = -std::exp(alog[j][n]);
        const double abar = std::exp(delta * a);
        const double bbar = (abar - 1.0) / (delta * a) * delta * bc[t][n];
        h[j][n] = abar * h[j][n] + bbar * u[t][j];
        acc += bc[t][N + n] * h[j][n];
      }
      y[t][j] = (acc + dsk[j] * u[t][j]) * silu(g[t][j]);
    }
  return mm(y, to_mat(p.out_proj));
}

}  // namespace karma::reference
