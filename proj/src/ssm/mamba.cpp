#include "karma/ssm/mamba.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "karma/error.hpp"
#include "karma/nn.hpp"
#include "karma/ops.hpp"

namespace karma::ssm {

double zoh_phi(double z) {
  if (std::abs(z) < 1e-6) return 1.0 + z * (0.5 + z / 6.0);
  return std::expm1(z) / z;
}

namespace {

// exp(z), phi(z) and phi'(z) from a single expm1.
struct ZohTerms {
  double a_bar;
  double phi;
  double phi_prime;
};

ZohTerms zoh_terms(double z) {
  const double em1 = std::expm1(z);
  const double e = 1.0 + em1;
  ZohTerms r{e, 0.0, 0.0};
  if (std::abs(z) < 1e-6) {
    r.phi = 1.0 + z * (0.5 + z / 6.0);
  } else {
    r.phi = em1 / z;
  }
  if (std::abs(z) < 1e-2) {
    r.phi_prime = 0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z * (1.0 / 30.0 + z * (1.0 / 144.0 + z / 840.0))));
  } else {
    r.phi_prime = (e * (z - 1.0) + 1.0) / (z * z);
  }
  return r;
}

}  // namespace

double zoh_phi_prime(double z) {
  if (std::abs(z) < 1e-2) {
    // sum_k k z^(k-1) / (k+1)!
    return 0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z * (1.0 / 30.0 + z * (1.0 / 144.0 + z / 840.0))));
  }
  const double e = std::exp(z);
  return (e * (z - 1.0) + 1.0) / (z * z);
}

Discretized discretize(const Tensor& delta, const Tensor& a, const Tensor& b) {
  if (delta.shape() != a.shape() || delta.shape() != b.shape()) {
    throw ShapeError("discretize: shapes differ " + to_string(delta.shape()) + ", " +
                     to_string(a.shape()) + ", " + to_string(b.shape()));
  }
  Discretized out{Tensor::zeros(delta.shape()), Tensor::zeros(delta.shape())};
  auto ab = out.a_bar.mutable_data();
  auto bb = out.b_bar.mutable_data();
  for (std::size_t i = 0; i < delta.size(); ++i) {
    if (!(delta[i] > 0.0)) throw ContractError("discretize: step size must be positive");
    if (!(a[i] < 0.0)) throw ContractError("discretize: A must be strictly negative");
    const double z = delta[i] * a[i];
    ab[i] = std::exp(z);
    bb[i] = zoh_phi(z) * delta[i] * b[i];
  }
  return out;
}

void ScanProblem::validate() const {
  const std::size_t hs = steps * inner * state;
  if (a_bar.size() != hs || b_bar.size() != hs || u.size() != steps * inner ||
      c.size() != steps * state || d.size() != inner || (!h0.empty() && h0.size() != inner * state)) {
    throw ShapeError("ScanProblem: buffer sizes do not match steps=" + std::to_string(steps) +
                     ", inner=" + std::to_string(inner) + ", state=" + std::to_string(state));
  }
}

namespace {

// Runs steps [begin, end) from the state in h, writing y and optionally every h_t.
void replay(const ScanProblem& p, std::size_t begin, std::size_t end, std::vector<double>& h,
            std::vector<double>& y, std::vector<double>* states) {
  const std::size_t di = p.inner, ns = p.state;
  for (std::size_t t = begin; t < end; ++t) {
    const double* a = p.a_bar.data() + t * di * ns;
    const double* b = p.b_bar.data() + t * di * ns;
    const double* c = p.c.data() + t * ns;
    for (std::size_t j = 0; j < di; ++j) {
      const double uj = p.u[t * di + j];
      double* hj = h.data() + j * ns;
      double acc = 0.0;
      for (std::size_t n = 0; n < ns; ++n) {
        hj[n] = a[j * ns + n] * hj[n] + b[j * ns + n] * uj;
        acc += c[n] * hj[n];
      }
      y[t * di + j] = acc + p.d[j] * uj;
    }
    if (states != nullptr) std::copy(h.begin(), h.end(), states->begin() + t * di * ns);
  }
}

}  // namespace

std::vector<double> scan_sequential(const ScanProblem& p, std::vector<double>* states,
                                    std::vector<double>* last) {
  p.validate();
  ScanState s(p.inner, p.state);
  if (!p.h0.empty()) s.h = p.h0;
  std::vector<double> y(p.steps * p.inner, 0.0);
  if (states != nullptr) states->assign(p.steps * p.inner * p.state, 0.0);
  replay(p, 0, p.steps, s.h, y, states);
  s.t = p.steps;
  if (last != nullptr) *last = s.h;
  return y;
}

std::vector<double> scan_chunked(const ScanProblem& p, std::size_t chunk,
                                 std::vector<double>* states, std::vector<double>* last) {
  if (chunk == 0) throw ContractError("scan_chunked: chunk must be at least 1");
  p.validate();
  const std::size_t di = p.inner, ns = p.state, width = di * ns;
  const std::size_t chunks = (p.steps + chunk - 1) / chunk;

  // Pass 1: each chunk collapses to one affine map h -> m * h + k per state entry; the
  // carries are the prefix compositions of those maps applied to h0.
  std::vector<double> carry((chunks + 1) * width, 0.0);
  if (!p.h0.empty()) std::copy(p.h0.begin(), p.h0.end(), carry.begin());
  std::vector<double> m(width), k(width);
  for (std::size_t ci = 0; ci < chunks; ++ci) {
    std::fill(m.begin(), m.end(), 1.0);
    std::fill(k.begin(), k.end(), 0.0);
    const std::size_t end = std::min(p.steps, (ci + 1) * chunk);
    for (std::size_t t = ci * chunk; t < end; ++t) {
      const double* a = p.a_bar.data() + t * width;
      const double* b = p.b_bar.data() + t * width;
      for (std::size_t j = 0; j < di; ++j) {
        const double uj = p.u[t * di + j];
        for (std::size_t n = 0; n < ns; ++n) {
          const std::size_t e = j * ns + n;
          m[e] *= a[e];
          k[e] = a[e] * k[e] + b[e] * uj;
        }
      }
    }
    const double* in = carry.data() + ci * width;
    double* out = carry.data() + (ci + 1) * width;
    for (std::size_t e = 0; e < width; ++e) out[e] = m[e] * in[e] + k[e];
  }

  // Pass 2: replay every chunk from its carried-in state.
  std::vector<double> y(p.steps * di, 0.0);
  if (states != nullptr) states->assign(p.steps * width, 0.0);
  std::vector<double> h(width);
  for (std::size_t ci = 0; ci < chunks; ++ci) {
    std::copy(carry.begin() + ci * width, carry.begin() + (ci + 1) * width, h.begin());
    replay(p, ci * chunk, std::min(p.steps, (ci + 1) * chunk), h, y, states);
  }
  if (last != nullptr) {
    if (chunks == 0) {
      last->assign(carry.begin(), carry.begin() + width);
    } else {
      *last = h;
    }
  }
  return y;
}

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a_log, const Tensor& b,
                      const Tensor& c, const Tensor& d_skip, ScanConfig config) {
  const auto [batch, steps, di] = u.extents();
  if (a_log.rank() != 2 || a_log.dim(0) != di) {
    throw ShapeError("selective_scan: A_log " + to_string(a_log.shape()) + " does not match inner width " +
                     std::to_string(di));
  }
  const std::size_t ns = a_log.dim(1);
  Shape bc_shape = u.shape();
  bc_shape.back() = ns;
  if (delta.shape() != u.shape() || b.shape() != bc_shape || c.shape() != bc_shape ||
      d_skip.shape() != Shape{di}) {
    throw ShapeError("selective_scan: inconsistent shapes u " + to_string(u.shape()) + ", delta " +
                     to_string(delta.shape()) + ", B " + to_string(b.shape()) + ", C " +
                     to_string(c.shape()) + ", D " + to_string(d_skip.shape()));
  }

  Tensor out = detail::make_output(u.shape(), {&u, &delta, &a_log, &b, &c, &d_skip});
  const bool keep_states = out.requires_grad();
  auto states = std::make_shared<std::vector<double>>();
  if (keep_states) states->resize(batch * steps * di * ns);

  std::vector<double> a_neg(di * ns);
  for (std::size_t e = 0; e < a_neg.size(); ++e) a_neg[e] = -std::exp(a_log[e]);

  // Time runs in blocks with the state carried across. Blocks hold whole chunks in chunked mode.
  std::size_t block = 64;
  if (config.mode == ScanMode::chunked) {
    if (config.chunk == 0) throw ContractError("selective_scan: chunk must be at least 1");
    block = std::max<std::size_t>(1, block / config.chunk) * config.chunk;
  }
  block = std::min(block, std::max<std::size_t>(steps, 1));
  ScanProblem p;
  p.inner = di;
  p.state = ns;
  p.d.assign(d_skip.data().begin(), d_skip.data().end());
  std::vector<double> block_states, carry;
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const std::size_t row0 = bi * steps;
    carry.assign(di * ns, 0.0);
    for (std::size_t t0 = 0; t0 < steps; t0 += block) {
      const std::size_t len = std::min(block, steps - t0);
      const std::size_t first = row0 + t0;
      p.steps = len;
      p.a_bar.resize(len * di * ns);
      p.b_bar.resize(len * di * ns);
      for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t j = 0; j < di; ++j) {
          const double dt = delta[(first + t) * di + j];
          if (dt <= 0.0) throw ContractError("selective_scan: step size must be positive");
          for (std::size_t n = 0; n < ns; ++n) {
            const double z = dt * a_neg[j * ns + n];
            const std::size_t e = (t * di + j) * ns + n;
            const ZohTerms zt = zoh_terms(z);
            p.a_bar[e] = zt.a_bar;
            p.b_bar[e] = zt.phi * dt * b[(first + t) * ns + n];
          }
        }
      }
      p.u.assign(u.data().begin() + first * di, u.data().begin() + (first + len) * di);
      p.c.assign(c.data().begin() + first * ns, c.data().begin() + (first + len) * ns);
      p.h0 = carry;
      std::vector<double>* sink = keep_states ? &block_states : nullptr;
      std::vector<double> y = config.mode == ScanMode::chunked ? scan_chunked(p, config.chunk, sink, &carry)
                                                               : scan_sequential(p, sink, &carry);
      std::copy(y.begin(), y.end(), out.mutable_data().begin() + first * di);
      if (keep_states) std::copy(block_states.begin(), block_states.end(), states->begin() + first * di * ns);
    }
  }

  detail::record("selective_scan", out, [=, a_neg = std::move(a_neg)] {
    const auto gy = out.grad();
    std::vector<double> gh(di * ns);
    std::vector<double> g_alog(di * ns, 0.0);
    std::vector<double> g_d(di, 0.0);
    std::vector<double> g_u(u.size(), 0.0), g_dt(delta.size(), 0.0), g_b(b.size(), 0.0),
        g_c(c.size(), 0.0);
    for (std::size_t bi = 0; bi < batch; ++bi) {
      std::fill(gh.begin(), gh.end(), 0.0);
      const std::size_t row0 = bi * steps;
      for (std::size_t t = steps; t-- > 0;) {
        const std::size_t row = row0 + t;
        const double* h_t = states->data() + row * di * ns;
        const double* h_prev = t > 0 ? h_t - di * ns : nullptr;
        for (std::size_t j = 0; j < di; ++j) {
          const double g = gy[row * di + j];
          const double uj = u[row * di + j];
          const double dt = delta[row * di + j];
          g_d[j] += g * uj;
          double gu = g * d_skip[j];
          double gdt = 0.0;
          for (std::size_t n = 0; n < ns; ++n) {
            const std::size_t e = j * ns + n;
            const double bn = b[row * ns + n];
            g_c[row * ns + n] += g * h_t[e];
            const double ghe = gh[e] + g * c[row * ns + n];
            const double an = a_neg[e];
            const double z = dt * an;
            const ZohTerms zt = zoh_terms(z);
            const double ab = zt.a_bar;
            const double ph = zt.phi;
            const double g_ab = h_prev != nullptr ? ghe * h_prev[e] : 0.0;
            const double g_bb = ghe * uj;
            gu += ghe * ph * dt * bn;
            const double gz = g_ab * ab + g_bb * zt.phi_prime * dt * bn;
            gdt += g_bb * ph * bn + gz * an;
            g_b[row * ns + n] += g_bb * ph * dt;
            g_alog[e] += gz * dt * an;
            gh[e] = ghe * ab;
          }
          g_u[row * di + j] += gu;
          g_dt[row * di + j] += gdt;
        }
      }
    }
    auto accumulate = [](const Tensor& t, const std::vector<double>& g) {
      if (!t.requires_grad()) return;
      auto dst = t.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    };
    accumulate(u, g_u);
    accumulate(delta, g_dt);
    accumulate(a_log, g_alog);
    accumulate(b, g_b);
    accumulate(c, g_c);
    accumulate(d_skip, g_d);
  });
  return out;
}

Tensor causal_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const auto [batch, steps, ch] = x.extents();
  if (weight.rank() != 2 || weight.dim(0) != ch || bias.shape() != Shape{ch}) {
    throw ShapeError("causal_conv1d: weight " + to_string(weight.shape()) + " / bias " +
                     to_string(bias.shape()) + " do not match " + std::to_string(ch) + " channels");
  }
  const std::size_t kw = weight.dim(1);
  Tensor out = detail::make_output(x.shape(), {&x, &weight, &bias});
  auto o = out.mutable_data();
  for (std::size_t bi = 0; bi < batch; ++bi)
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t c = 0; c < ch; ++c) {
        double acc = bias[c];
        for (std::size_t k = 0; k < kw; ++k) {
          if (t + k + 1 < kw) continue;
          acc += weight[c * kw + k] * x[(bi * steps + t + k + 1 - kw) * ch + c];
        }
        o[(bi * steps + t) * ch + c] = acc;
      }
  detail::record("causal_conv1d", out, [=] {
    const auto g = out.grad();
    for (std::size_t bi = 0; bi < batch; ++bi)
      for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t c = 0; c < ch; ++c) {
          const double go = g[(bi * steps + t) * ch + c];
          if (bias.requires_grad()) bias.mutable_grad()[c] += go;
          for (std::size_t k = 0; k < kw; ++k) {
            if (t + k + 1 < kw) continue;
            const std::size_t src = (bi * steps + t + k + 1 - kw) * ch + c;
            if (weight.requires_grad()) weight.mutable_grad()[c * kw + k] += go * x[src];
            if (x.requires_grad()) x.mutable_grad()[src] += go * weight[c * kw + k];
          }
        }
  });
  return out;
}

SsmParams SsmParams::init(std::size_t d_in, std::size_t d_state, std::size_t d_conv,
                          std::size_t expand, Rng& rng) {
  if (d_in == 0 || d_state == 0 || d_conv == 0 || expand == 0) {
    throw ConfigError("SSM widths must be positive (d_in=" + std::to_string(d_in) +
                          ", d_state=" + std::to_string(d_state) + ", d_conv=" +
                          std::to_string(d_conv) + ", expand=" + std::to_string(expand) + ")",
                      d_conv == 0 ? "d_conv" : (d_state == 0 ? "d_state" : "expand"));
  }
  SsmParams p;
  p.d_in = d_in;
  p.d_inner = expand * d_in;
  p.d_state = d_state;
  p.d_conv = d_conv;
  p.dt_rank = (d_in + 15) / 16;
  const std::size_t di = p.d_inner;
  auto inv_sqrt = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };

  p.in_proj = uniform_parameter({d_in, 2 * di}, inv_sqrt(d_in), rng);
  p.conv_weight = uniform_parameter({di, d_conv}, inv_sqrt(d_conv), rng);
  p.conv_bias = uniform_parameter({di}, inv_sqrt(d_conv), rng);
  p.x_proj_bc = uniform_parameter({di, 2 * d_state}, inv_sqrt(di), rng);
  p.dt_down = uniform_parameter({di, p.dt_rank}, inv_sqrt(di), rng);
  p.dt_up = uniform_parameter({p.dt_rank, di}, inv_sqrt(p.dt_rank), rng);

  std::vector<double> bias(di);
  const double lo = std::log(1e-3), hi = std::log(1e-1);
  for (double& v : bias) {
    const double dt = std::exp(rng.uniform(lo, hi));
    v = dt + std::log(-std::expm1(-dt));  // softplus^-1
  }
  p.dt_bias = Tensor::from_data({di}, bias, true);

  std::vector<double> a(di * d_state);
  for (std::size_t j = 0; j < di; ++j)
    for (std::size_t n = 0; n < d_state; ++n) a[j * d_state + n] = std::log(static_cast<double>(n + 1));
  p.a_log = Tensor::from_data({di, d_state}, a, true);
  p.d_skip = Tensor::filled({di}, 1.0, true);
  p.out_proj = uniform_parameter({di, d_in}, inv_sqrt(di), rng);
  return p;
}

std::size_t SsmParams::count(std::size_t d_in, std::size_t d_state, std::size_t d_conv,
                             std::size_t expand) {
  const std::size_t di = expand * d_in;
  const std::size_t r = (d_in + 15) / 16;
  return d_in * 2 * di + di * d_conv + di + di * 2 * d_state + di * r + r * di + di +
         di * d_state + di + di * d_in;
}

std::vector<Tensor> SsmParams::tensors() const {
  return {in_proj, conv_weight, conv_bias, x_proj_bc, dt_down,
          dt_up,   dt_bias,     a_log,     d_skip,    out_proj};
}

std::vector<const char*> SsmParams::tensor_names() const {
  return {"in_proj", "conv_weight", "conv_bias", "x_proj_bc", "dt_down",
          "dt_up",   "dt_bias",     "a_log",     "d_skip",    "out_proj"};
}

Tensor mamba_forward(const Tensor& x, const SsmParams& params, ScanConfig config) {
  if (x.rank() < 2 || x.shape().back() != params.d_in) {
    throw ShapeError("mamba_forward: input " + to_string(x.shape()) + " does not have width " +
                     std::to_string(params.d_in));
  }
  if (x.shape()[x.rank() - 2] == 0) throw ShapeError("mamba_forward: no tokens");
  const std::size_t di = params.d_inner, ns = params.d_state;
  Tensor xz = matmul(x, params.in_proj);
  Tensor stream = slice_cols(xz, 0, di);
  Tensor gate = slice_cols(xz, di, di);
  Tensor u = silu(causal_conv1d(stream, params.conv_weight, params.conv_bias));
  Tensor bc = matmul(u, params.x_proj_bc);
  Tensor b = slice_cols(bc, 0, ns);
  Tensor c = slice_cols(bc, ns, ns);
  Tensor delta =
      softplus(add_bias(matmul(matmul(u, params.dt_down), params.dt_up), params.dt_bias));
  Tensor y = selective_scan(u, delta, params.a_log, b, c, params.d_skip, config);
  return matmul(mul(y, silu(gate)), params.out_proj);
}

}  // namespace karma::ssm
