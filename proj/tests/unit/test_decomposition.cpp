#include <cmath>
#include <numeric>

#include "doctest.h"
#include "karma/decomposition/atcd.hpp"
#include "karma/decomposition/hftd.hpp"
#include "karma/decomposition/wavelet.hpp"
#include "karma/error.hpp"
#include "karma/gradcheck.hpp"
#include "reference.hpp"
#include "test_helpers.hpp"

using namespace karma;
using namespace karma::decomp;
using karma::testing::max_abs_diff;
using karma::testing::random_tensor;
namespace ref = karma::reference;

namespace {

std::vector<double> random_signal(std::size_t n, Rng& rng) {
  std::vector<double> x(n);
  for (double& v : x) v = rng.uniform(-3, 3);
  return x;
}

double energy(const std::vector<double>& v) {
  return std::inner_product(v.begin(), v.end(), v.begin(), 0.0);
}

}  // namespace

TEST_CASE("haar taps") {
  const double r = 1.0 / std::sqrt(2.0);
  WaveletFilter h = WaveletFilter::haar();
  CHECK(h.analysis_low == std::vector<double>{r, r});
  CHECK(h.analysis_high == std::vector<double>{r, -r});
  CHECK(h.support() == 2);
}

TEST_CASE("db4 is an orthonormal scaling filter with four vanishing moments") {
  WaveletFilter f = WaveletFilter::db4();
  const auto& h = f.analysis_low;
  const auto& g = f.analysis_high;
  REQUIRE(h.size() == 8);
  CHECK(std::accumulate(h.begin(), h.end(), 0.0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
  for (std::size_t shift = 0; shift < 8; shift += 2) {
    double hh = 0.0, gg = 0.0, hg = 0.0;
    for (std::size_t i = 0; i + shift < 8; ++i) {
      hh += h[i] * h[i + shift];
      gg += g[i] * g[i + shift];
      hg += h[i] * g[i + shift] + g[i] * h[i + shift];
    }
    CHECK(std::abs(hh - (shift == 0 ? 1.0 : 0.0)) <= 1e-14);
    CHECK(std::abs(gg - (shift == 0 ? 1.0 : 0.0)) <= 1e-14);
    CHECK(std::abs(hg) <= 1e-14);
  }
  for (int moment = 0; moment < 4; ++moment) {
    double s = 0.0;
    for (std::size_t i = 0; i < 8; ++i) s += g[i] * std::pow(static_cast<double>(i), moment);
    CHECK(std::abs(s) <= 1e-11);
  }
  CHECK_THROWS_AS(WaveletFilter::by_name("sym5"), ConfigError);
}

TEST_CASE("dwt_analyze examples") {
  WaveletFilter haar = WaveletFilter::haar();
  DwtCoefficients c = dwt_analyze(std::vector<double>{5, 5, 5, 5}, haar);
  CHECK(c.high == std::vector<double>{0.0, 0.0});
  for (double v : c.low) CHECK(std::abs(v - 5.0 * std::sqrt(2.0)) <= 1e-10);
  CHECK(c.low[0] == doctest::Approx(7.0711).epsilon(1e-4));

  DwtCoefficients d = dwt_analyze(std::vector<double>{1, 2, 3, 4}, haar);
  CHECK(d.low[0] == doctest::Approx(3.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(d.low[0] == doctest::Approx(2.1213).epsilon(1e-4));
  CHECK(d.low[1] == doctest::Approx(4.9497).epsilon(1e-4));
  CHECK(d.high[0] == doctest::Approx(-0.7071).epsilon(1e-4));
  CHECK(d.high[1] == doctest::Approx(-0.7071).epsilon(1e-4));

  CHECK_THROWS_AS(dwt_analyze(std::vector<double>{1, 2, 3}, haar), ConfigError);
}

TEST_CASE("dwt_synthesize examples") {
  WaveletFilter haar = WaveletFilter::haar();
  auto z = dwt_synthesize(std::vector<double>{0, 0}, std::vector<double>{0, 0}, haar);
  CHECK(z == std::vector<double>{0, 0, 0, 0});
  const double r = 1.0 / std::sqrt(2.0);
  auto x = dwt_synthesize(std::vector<double>{3 * r, 7 * r}, std::vector<double>{-r, -r}, haar);
  for (std::size_t i = 0; i < 4; ++i) CHECK(x[i] == doctest::Approx(i + 1.0).epsilon(1e-12));
  auto y = dwt_synthesize(std::vector<double>{2.1213, 4.9497}, std::vector<double>{-0.7071, -0.7071},
                          haar);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(y[i] - (i + 1.0)) <= 1e-4);
  CHECK_THROWS_AS(dwt_synthesize(std::vector<double>{1, 2}, std::vector<double>{1}, haar),
                  ShapeError);
}

TEST_CASE("perfect reconstruction and energy over seeded lengths") {
  Rng rng(2024);
  for (const auto& filter : {WaveletFilter::haar(), WaveletFilter::db4()}) {
    for (std::size_t n = 8; n <= 512; n += 2) {
      auto x = random_signal(n, rng);
      auto c = dwt_analyze(x, filter);
      auto back = dwt_synthesize(c.low, c.high, filter);
      CAPTURE(filter.name);
      CAPTURE(n);
      CHECK(max_abs_diff(x, back) <= 1e-10);
      CHECK(std::abs(energy(c.low) + energy(c.high) - energy(x)) <= 1e-10 * std::max(1.0, energy(x)));
    }
  }
}

TEST_CASE("tensor dwt matches per-row transforms and has exact adjoints") {
  Rng rng(8);
  for (const auto& filter : {WaveletFilter::haar(), WaveletFilter::db4()}) {
    Tensor x = random_tensor({2, 3, 16}, rng, -1, 1, true);
    DwtBands b = dwt_analyze(x, filter);
    CHECK(b.low.shape() == Shape{2, 3, 8});
    for (std::size_t r = 0; r < 6; ++r) {
      std::vector<double> row(x.data().begin() + r * 16, x.data().begin() + (r + 1) * 16);
      auto c = dwt_analyze(row, filter);
      for (std::size_t k = 0; k < 8; ++k) {
        CHECK(b.low[r * 8 + k] == c.low[k]);
        CHECK(b.high[r * 8 + k] == c.high[k]);
      }
    }
    CHECK(max_abs_diff(dwt_synthesize(b.low, b.high, filter), x) <= 1e-12);

    Tensor probe = random_tensor({2, 3, 8}, rng);
    CHECK(fd_check(
              [&](const Tensor& v) {
                auto bb = dwt_analyze(v, filter);
                return add(sum(mul(bb.low, probe)), sum(square(bb.high)));
              },
              x, 1e-6) <= 1e-6);
    Tensor lo = random_tensor({2, 3, 8}, rng, -1, 1, true);
    Tensor hi = random_tensor({2, 3, 8}, rng, -1, 1, true);
    CHECK(fd_check([&](const Tensor& v) { return sum(square(dwt_synthesize(v, hi, filter))); }, lo,
                   1e-6) <= 1e-6);
    CHECK(fd_check([&](const Tensor& v) { return sum(square(dwt_synthesize(lo, v, filter))); }, hi,
                   1e-6) <= 1e-6);
  }
}

// ---------------------------------------------------------------- attention

namespace {

AtcdParams make_params(std::size_t d, std::size_t inner, std::size_t heads, std::uint64_t seed,
                       double p = 0.0) {
  Rng rng(seed);
  return AtcdParams::init(d, inner, heads, p, rng);
}

void set_identity(Tensor& t) {
  auto v = t.mutable_data();
  const std::size_t n = t.dim(0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] = i == j ? 1.0 : 0.0;
}

// Brute-force multi-head attention: one explicit triple loop per head.
ref::Mat brute_mha(const ref::Mat& x, const AtcdParams& p) {
  const std::size_t L = x.size(), I = p.inner, dn = p.head_dim();
  auto wq = ref::to_mat(p.w_q), wk = ref::to_mat(p.w_k), wv = ref::to_mat(p.w_v),
       wo = ref::to_mat(p.w_o);
  ref::Mat concat = ref::zeros(L, I);
  for (std::size_t h = 0; h < p.heads; ++h) {
    ref::Mat q = ref::zeros(L, dn), k = ref::zeros(L, dn), v = ref::zeros(L, dn);
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t c = 0; c < dn; ++c)
        for (std::size_t i = 0; i < I; ++i) {
          q[t][c] += x[t][i] * wq[i][h * dn + c];
          k[t][c] += x[t][i] * wk[i][h * dn + c];
          v[t][c] += x[t][i] * wv[i][h * dn + c];
        }
    ref::Mat s = ref::zeros(L, L);
    for (std::size_t a = 0; a < L; ++a)
      for (std::size_t b = 0; b < L; ++b) {
        for (std::size_t c = 0; c < dn; ++c) s[a][b] += q[a][c] * k[b][c];
        s[a][b] /= std::sqrt(static_cast<double>(dn));
      }
    s = ref::softmax(s);
    for (std::size_t a = 0; a < L; ++a)
      for (std::size_t c = 0; c < dn; ++c)
        for (std::size_t b = 0; b < L; ++b) concat[a][h * dn + c] += s[a][b] * v[b][c];
  }
  return ref::mm(concat, wo);
}

}  // namespace

TEST_CASE("mha with a single token returns (x W_V) W_O") {
  AtcdParams p = make_params(3, 8, 2, 1);
  Rng rng(2);
  Tensor x = random_tensor({1, 8}, rng);
  Tensor y = mha(x, p);
  auto expect = ref::mm(ref::mm(ref::to_mat(x), ref::to_mat(p.w_v)), ref::to_mat(p.w_o));
  for (std::size_t j = 0; j < 8; ++j) CHECK(y[j] == doctest::Approx(expect[0][j]).epsilon(1e-13));
}

TEST_CASE("mha with zero logits averages the tokens") {
  AtcdParams p = make_params(3, 4, 1, 1);
  for (double& v : p.w_q.mutable_data()) v = 0.0;
  for (double& v : p.w_k.mutable_data()) v = 0.0;
  set_identity(p.w_v);
  set_identity(p.w_o);
  Rng rng(3);
  Tensor x = random_tensor({5, 4}, rng);
  Tensor y = mha(x, p);
  for (std::size_t j = 0; j < 4; ++j) {
    double m = 0;
    for (std::size_t t = 0; t < 5; ++t) m += x[t * 4 + j];
    m /= 5.0;
    for (std::size_t t = 0; t < 5; ++t) CHECK(y[t * 4 + j] == doctest::Approx(m).epsilon(1e-13));
  }
}

TEST_CASE("mha equals brute-force evaluation and attention rows are distributions") {
  AtcdParams p = make_params(3, 8, 2, 17);
  Rng rng(4);
  Tensor x = random_tensor({4, 8}, rng);
  std::vector<Tensor> attention;
  Tensor y = mha(x, p, &attention);
  auto expect = brute_mha(ref::to_mat(x), p);
  CHECK(max_abs_diff(y.data(), [&] {
          std::vector<double> v;
          for (auto& row : expect) v.insert(v.end(), row.begin(), row.end());
          return v;
        }()) <= 1e-12);
  REQUIRE(attention.size() == 2);
  for (const Tensor& a : attention) {
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(a[r * 4 + c] >= 0.0);
        s += a[r * 4 + c];
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
  CHECK_THROWS_AS(mha(random_tensor({4, 6}, rng), p), ShapeError);
}

TEST_CASE("atcd with zero W_O sends everything to the seasonal part") {
  AtcdParams p = make_params(3, 8, 2, 5, 0.1);
  for (double& v : p.w_o.mutable_data()) v = 0.0;
  Rng rng(6);
  Tensor x = random_tensor({8, 3}, rng);
  AtcdOutput out = atcd_forward(x, p, rng, false);
  for (double v : out.inner_trend.data()) CHECK(v == 0.0);
  CHECK(max_abs_diff(out.inner_seasonal, out.inner_input) == 0.0);
}

TEST_CASE("atcd matches a straight-line evaluation of the decomposition equations") {
  AtcdParams p = make_params(3, 6, 1, 99);
  Rng rng(7);
  Tensor x = random_tensor({8, 3}, rng);
  AtcdOutput out = atcd_forward(x, p, rng, false);

  // x_in = x W_in + b ; trend = silu(softmax(Q K^T / sqrt(d)) V W_O) ; seasonal = x_in - trend
  ref::Mat xin = ref::plus_bias(ref::mm(ref::to_mat(x), ref::to_mat(p.input.weight)),
                                ref::to_vec(p.input.bias));
  ref::Mat q = ref::mm(xin, ref::to_mat(p.w_q));
  ref::Mat k = ref::mm(xin, ref::to_mat(p.w_k));
  ref::Mat v = ref::mm(xin, ref::to_mat(p.w_v));
  ref::Mat s = ref::mm(q, ref::tr(k));
  for (auto& row : s)
    for (double& e : row) e /= std::sqrt(6.0);
  ref::Mat m = ref::mm(ref::mm(ref::softmax(s), v), ref::to_mat(p.w_o));
  ref::Mat trend_in = m, seas_in = m;
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t i = 0; i < 6; ++i) {
      trend_in[t][i] = ref::silu(m[t][i]);
      seas_in[t][i] = xin[t][i] - trend_in[t][i];
    }
  ref::Mat trend = ref::plus_bias(ref::mm(trend_in, ref::to_mat(p.out_trend.weight)),
                                  ref::to_vec(p.out_trend.bias));
  ref::Mat seas = ref::plus_bias(ref::mm(seas_in, ref::to_mat(p.out_seasonal.weight)),
                                 ref::to_vec(p.out_seasonal.bias));
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t d = 0; d < 3; ++d) {
      CHECK(std::abs(out.trend[t * 3 + d] - trend[t][d]) <= 1e-10);
      CHECK(std::abs(out.seasonal[t * 3 + d] - seas[t][d]) <= 1e-10);
    }
}

TEST_CASE("atcd is deterministic in eval mode and additive in inner space") {
  AtcdParams p = make_params(4, 8, 4, 12, 0.3);
  Rng rng(13);
  Tensor x = random_tensor({2, 10, 4}, rng, -2, 2);
  Rng r1(1), r2(2);
  AtcdOutput a = atcd_forward(x, p, r1, false);
  AtcdOutput b = atcd_forward(x, p, r2, false);
  CHECK(max_abs_diff(a.trend, b.trend) == 0.0);
  CHECK(max_abs_diff(a.seasonal, b.seasonal) == 0.0);
  for (int train = 0; train < 2; ++train) {
    Rng r(40 + train);
    AtcdOutput o = atcd_forward(x, p, r, train == 1);
    double scale = 0;
    for (double v : o.inner_input.data()) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < o.inner_input.size(); ++i) {
      CHECK(std::abs(o.inner_trend[i] + o.inner_seasonal[i] - o.inner_input[i]) <=
            1e-15 * std::max(1.0, scale) * 4);
    }
  }
  CHECK_THROWS_AS(atcd_forward(random_tensor({10, 3}, rng), p, rng, false), ShapeError);
}

TEST_CASE("atcd init validates its configuration") {
  Rng rng(1);
  CHECK_THROWS_AS(AtcdParams::init(3, 10, 4, 0.1, rng), ConfigError);
  CHECK_THROWS_AS(AtcdParams::init(3, 8, 4, 1.0, rng), ConfigError);
}

// --------------------------------------------------------------------- hftd

TEST_CASE("hftd_decompose") {
  const WaveletFilter haar = WaveletFilter::haar();
  Tensor gain = Tensor::filled({8}, 1.0);
  std::vector<double> constant(3 * 8);
  for (std::size_t d = 0; d < 3; ++d)
    for (std::size_t n = 0; n < 8; ++n) constant[d * 8 + n] = 1.5 * d - 2.0;
  FreqComponents c = hftd_decompose(Tensor::from_data({3, 8}, constant), haar, gain);
  for (double v : c.high.data()) CHECK(v == 0.0);
  CHECK(c.high.shape() == Shape{3, 4});
  CHECK(c.low.shape() == Shape{3, 4});
  CHECK(c.coeffs() == 4);

  Rng rng(9);
  Tensor x = random_tensor({2, 5, 8}, rng);
  FreqComponents f = hftd_decompose(x, haar, gain);
  CHECK(f.temporal_fwd.shape() == Shape{2, 5, 8});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t n = 0; n < 8; ++n)
        CHECK(f.temporal_bwd[(b * 5 + i) * 8 + n] == f.temporal_fwd[(b * 5 + (4 - i)) * 8 + n]);
}

TEST_CASE("hftd_inverse") {
  Rng rng(10);
  for (const auto& filter : {WaveletFilter::haar(), WaveletFilter::db4()}) {
    Tensor gain = Tensor::filled({16}, 1.0);
    Tensor x = random_tensor({4, 16}, rng, -2, 2);
    FreqComponents f = hftd_decompose(x, filter, gain);
    f.temporal_fwd = Tensor::zeros(f.temporal_fwd.shape());
    CHECK(max_abs_diff(hftd_inverse(f, filter), x) <= 1e-10);

    FreqComponents zero{Tensor::zeros({4, 8}), Tensor::zeros({4, 8}), Tensor::zeros({4, 16}),
                        Tensor::zeros({4, 16})};
    Tensor rebuilt = hftd_inverse(zero, filter);
    for (double v : rebuilt.data()) CHECK(v == 0.0);

    FreqComponents g = hftd_decompose(x, filter, gain);
    FreqComponents scaled{scale(g.high, 2.5), scale(g.low, 2.5), scale(g.temporal_fwd, 2.5),
                          scale(g.temporal_bwd, 2.5)};
    Tensor lhs = hftd_inverse(scaled, filter);
    Tensor rhs = scale(hftd_inverse(g, filter), 2.5);
    CHECK(max_abs_diff(lhs, rhs) <= 1e-12);

    FreqComponents bad = g;
    bad.temporal_fwd = Tensor::zeros({4, 12});
    CHECK_THROWS_AS(hftd_inverse(bad, filter), ShapeError);
  }
}
