#include "karma/model/karma.hpp"

#include "karma/error.hpp"
#include "karma/model/normalization.hpp"
#include "karma/ops.hpp"

namespace karma::model {

namespace {

void add_linear(std::vector<NamedTensor>& out, const std::string& prefix, const Linear& l) {
  out.push_back({prefix + ".weight", l.weight});
  if (l.bias.defined()) out.push_back({prefix + ".bias", l.bias});
}

void add_ssm(std::vector<NamedTensor>& out, const std::string& prefix, const ssm::SsmParams& p) {
  auto tensors = p.tensors();
  auto names = p.tensor_names();
  for (std::size_t i = 0; i < tensors.size(); ++i) out.push_back({prefix + "." + names[i], tensors[i]});
}

ssm::SsmParams make_ssm(std::size_t width, const KarmaConfig& c, Rng& rng) {
  return ssm::SsmParams::init(width, c.d_state, c.d_conv, c.expand, rng);
}

}  // namespace

std::vector<NamedTensor> KarmaModel::parameters() const {
  std::vector<NamedTensor> out;
  add_linear(out, "atcd.input", atcd.input);
  out.push_back({"atcd.w_q", atcd.w_q});
  out.push_back({"atcd.w_k", atcd.w_k});
  out.push_back({"atcd.w_v", atcd.w_v});
  out.push_back({"atcd.w_o", atcd.w_o});
  add_linear(out, "atcd.out_trend", atcd.out_trend);
  add_linear(out, "atcd.out_seasonal", atcd.out_seasonal);
  add_linear(out, "embed.seasonal", embed_seasonal);
  add_linear(out, "embed.trend", embed_trend);
  out.push_back({"hftd.gain", hftd_gain});
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i);
    add_ssm(out, p + ".high", blocks[i].high);
    add_ssm(out, p + ".low", blocks[i].low);
    add_ssm(out, p + ".temporal", blocks[i].temporal);
    if (blocks[i].temporal_bwd) add_ssm(out, p + ".temporal_bwd", *blocks[i].temporal_bwd);
    out.push_back({p + ".rms_gain", blocks[i].rms_gain});
  }
  add_ssm(out, "global", global);
  add_linear(out, "head.seasonal", head_seasonal);
  add_linear(out, "head.trend", head_trend);
  if (affine_weight.defined()) {
    out.push_back({"affine.weight", affine_weight});
    out.push_back({"affine.bias", affine_bias});
  }
  return out;
}

std::size_t KarmaModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.size();
  return n;
}

ssm::ScanConfig KarmaModel::scan_config() const {
  if (config.scan_chunk == 0) return {};
  return {ssm::ScanMode::chunked, config.scan_chunk};
}

KarmaModel init_parameters(const KarmaConfig& config, Rng& rng) {
  config.validate();
  KarmaModel m;
  m.config = config;
  m.atcd = decomp::AtcdParams::init(config.channels, config.atcd_inner, config.atcd_heads,
                                    config.atcd_dropout, rng);
  m.embed_seasonal = Linear::init(config.lookback, config.e_s, rng);
  m.embed_trend = Linear::init(config.lookback, config.e_t, rng);
  m.hftd_gain = Tensor::filled({config.e_s}, 1.0, true);
  for (std::size_t i = 0; i < config.n_blocks; ++i) {
    KarmaBlockParams b;
    b.high = make_ssm(config.e_s / 2, config, rng);
    b.low = make_ssm(config.e_s / 2, config, rng);
    b.temporal = make_ssm(config.e_s, config, rng);
    if (!config.share_temporal_mamba) b.temporal_bwd = make_ssm(config.e_s, config, rng);
    b.rms_gain = Tensor::filled({config.e_s}, 1.0, true);
    m.blocks.push_back(std::move(b));
  }
  m.global = make_ssm(config.e_t, config, rng);
  m.head_seasonal = Linear::init(config.e_s, config.horizon, rng);
  m.head_trend = Linear::init(config.e_t, config.horizon, rng);
  if (config.affine_norm) {
    m.affine_weight = Tensor::filled({config.channels}, 1.0, true);
    m.affine_bias = Tensor::zeros({config.channels}, true);
  }
  return m;
}

std::size_t parameter_count(const KarmaConfig& c) {
  const std::size_t D = c.channels, I = c.atcd_inner, L = c.lookback, T = c.horizon;
  auto mamba = [&](std::size_t width) { return ssm::SsmParams::count(width, c.d_state, c.d_conv, c.expand); };
  const std::size_t atcd = D * I + I + 4 * I * I + 2 * (I * D + D);
  const std::size_t embed = L * c.e_s + c.e_s + L * c.e_t + c.e_t;
  const std::size_t temporal = mamba(c.e_s) * (c.share_temporal_mamba ? 1 : 2);
  const std::size_t block = 2 * mamba(c.e_s / 2) + temporal + c.e_s;
  const std::size_t heads = c.e_s * T + T + c.e_t * T + T;
  const std::size_t affine = c.affine_norm ? 2 * D : 0;
  return atcd + embed + c.e_s + c.n_blocks * block + mamba(c.e_t) + heads + affine;
}

std::pair<Tensor, Tensor> embed_components(const Tensor& x_s, const Tensor& x_t,
                                           const KarmaModel& model) {
  const KarmaConfig& c = model.config;
  auto check = [&](const Tensor& x, const char* what) {
    if (x.rank() < 2 || x.shape()[x.rank() - 2] != c.lookback || x.shape().back() != c.channels) {
      throw ShapeError(std::string("embed_components: ") + what + " " + to_string(x.shape()) +
                       " is not [L x D] = [" + std::to_string(c.lookback) + "x" +
                       std::to_string(c.channels) + "]");
    }
  };
  check(x_s, "seasonal");
  check(x_t, "trend");
  return {model.embed_seasonal.forward(transpose(x_s)), model.embed_trend.forward(transpose(x_t))};
}

decomp::FreqComponents karma_block(const decomp::FreqComponents& f, const KarmaBlockParams& block,
                                   const KarmaModel& model) {
  const ssm::ScanConfig scan = model.scan_config();
  if (f.temporal_fwd.shape() != f.temporal_bwd.shape()) {
    throw ShapeError("karma_block: temporal streams differ " + to_string(f.temporal_fwd.shape()) +
                     " vs " + to_string(f.temporal_bwd.shape()));
  }
  decomp::FreqComponents out;
  if (model.config.use_hftd) {
    out.high = ssm::mamba_forward(f.high, block.high, scan);
    out.low = ssm::mamba_forward(f.low, block.low, scan);
  } else {
    out.high = f.high;
    out.low = f.low;
  }
  const ssm::SsmParams& bwd = block.temporal_bwd ? *block.temporal_bwd : block.temporal;
  Tensor fwd_path = ssm::mamba_forward(rmsnorm(f.temporal_fwd, block.rms_gain, decomp::kRmsEps),
                                       block.temporal, scan);
  Tensor bwd_path = ssm::mamba_forward(f.temporal_bwd, bwd, scan);
  out.temporal_fwd = add(add(fwd_path, bwd_path), f.temporal_fwd);
  out.temporal_bwd = flip_axis0(out.temporal_fwd);
  return out;
}

Tensor karma_forward(const Tensor& x, const KarmaModel& model, Rng& rng, bool training,
                     KarmaTrace* trace) {
  const KarmaConfig& c = model.config;
  if (x.rank() < 2 || x.shape()[x.rank() - 2] != c.lookback || x.shape().back() != c.channels) {
    throw ShapeError("karma_forward: input " + to_string(x.shape()) + " does not match [L x D] = [" +
                     std::to_string(c.lookback) + "x" + std::to_string(c.channels) + "]");
  }
  const bool single = x.rank() == 2;
  const Tensor xb = single ? reshape(x, {1, c.lookback, c.channels}) : x;

  auto [normalized, stats] = instance_normalize(xb, c.norm_eps);
  Tensor xn = normalized;
  if (c.affine_norm) xn = add_bias(mul_cols(xn, model.affine_weight), model.affine_bias);

  Tensor seasonal, trend;
  decomp::AtcdOutput atcd;
  if (c.use_atcd) {
    atcd = decomp::atcd_forward(xn, model.atcd, rng, training);
    seasonal = atcd.seasonal;
    trend = atcd.trend;
  } else {
    seasonal = xn;
    trend = Tensor::zeros(xn.shape());
  }
  auto [x_se, x_te] = embed_components(seasonal, trend, model);

  const decomp::WaveletFilter filter = decomp::WaveletFilter::by_name(c.wavelet);
  decomp::FreqComponents f;
  if (c.use_hftd) {
    f = decomp::hftd_decompose(x_se, filter, model.hftd_gain);
  } else {
    f.temporal_fwd = rmsnorm(x_se, model.hftd_gain, decomp::kRmsEps);
    f.temporal_bwd = flip_axis0(f.temporal_fwd);
  }
  const decomp::FreqComponents initial = f;
  for (const KarmaBlockParams& block : model.blocks) f = karma_block(f, block, model);
  Tensor seasonal_rep = c.use_hftd ? decomp::hftd_inverse(f, filter) : f.temporal_fwd;

  Tensor y_s = transpose(model.head_seasonal.forward(seasonal_rep));
  Tensor y_t = transpose(model.head_trend.forward(ssm::mamba_forward(x_te, model.global, model.scan_config())));
  Tensor y = add(y_s, y_t);
  if (c.affine_norm) {
    Tensor shift = scale(model.affine_bias, -1.0);
    Tensor inv = reciprocal(add(model.affine_weight, Tensor::filled({c.channels}, c.norm_eps * c.norm_eps)));
    y = mul_cols(add_bias(y, shift), inv);
  }
  y = instance_denormalize(y, stats);

  if (trace != nullptr) {
    trace->normalized = xn;
    trace->atcd = atcd;
    trace->seasonal_embedding = x_se;
    trace->trend_embedding = x_te;
    trace->initial = initial;
    trace->final = f;
    trace->seasonal_output = y_s;
    trace->trend_output = y_t;
  }
  return single ? reshape(y, {c.horizon, c.channels}) : y;
}

}  // namespace karma::model
