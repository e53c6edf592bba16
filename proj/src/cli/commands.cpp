#include "karma/cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "karma/error.hpp"
#include "karma/model/checkpoint.hpp"
#include "karma/ops.hpp"

#ifndef KARMA_VERSION
#define KARMA_VERSION "0.1.0"
#endif

namespace karma::cli {

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using model::format_double;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Log {
  std::ostream& os;
  bool quiet;
  void operator()(const std::string& line) const {
    if (!quiet) os << line << '\n' << std::flush;
  }
};

void ensure_dir(const fs::path& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory '" + dir.string() + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_dir(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

Report metrics_json(const training::Metrics& m) {
  return {{"mse", m.mse},
          {"mae", m.mae},
          {"horizon_mse", m.horizon_mse},
          {"horizon_mae", m.horizon_mae},
          {"windows", m.windows}};
}

Report brief_json(const training::Metrics& m) { return {{"mse", m.mse}, {"mae", m.mae}}; }

std::string source_name(const RunConfig& cfg) { return cfg.data.empty() ? "synthetic" : cfg.data.string(); }

data::SeriesTable load_table(const RunConfig& cfg, std::size_t channels) {
  if (cfg.data.empty()) {
    data::SyntheticSpec spec = cfg.synth;
    spec.channels = channels;
    return data::generate_synthetic(spec);
  }
  if (!fs::exists(cfg.data)) throw ConfigError("data file '" + cfg.data.string() + "' does not exist", "data");
  return data::load_csv(cfg.data);
}

void require_channels(const data::SeriesTable& table, std::size_t expected, const RunConfig& cfg) {
  if (table.channels() != expected) {
    throw ConfigError("model expects D=" + std::to_string(expected) + " channels but '" + source_name(cfg) +
                          "' has " + std::to_string(table.channels()),
                      "D");
  }
}

std::vector<double> column_means(const data::SeriesTable& t) {
  std::vector<double> m(t.channels(), 0.0);
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.channels(); ++c) m[c] += t.at(r, c);
  for (double& v : m) v /= static_cast<double>(t.rows());
  return m;
}

std::string join_ratios(const data::SplitRatios& s) {
  return format_double(s.train) + "," + format_double(s.val) + "," + format_double(s.test);
}

Report split_json(const data::SplitRatios& s) { return {s.train, s.val, s.test}; }

std::optional<data::SplitRatios> parse_ratios(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(model::parse_double(item, "split"));
  if (v.size() != 3) return std::nullopt;
  return data::SplitRatios{v[0], v[1], v[2]};
}

void write_report(const RunConfig& cfg, Report& report) {
  const fs::path path = cfg.out / (command_name(cfg.command) + "_report.json");
  report["files"]["report"] = path.string();
  write_text(path, dump_report(report));
}

Report base_report(const RunConfig& cfg) {
  Report r;
  r["command"] = command_name(cfg.command);
  r["version"] = version();
  r["config"] = cfg.entries();
  return r;
}

struct Trained {
  model::KarmaModel model;
  data::ScalerStats scaler;
  std::optional<data::SplitRatios> split;
};

Trained load_trained(const RunConfig& cfg) {
  const fs::path path = cfg.checkpoint_path();
  if (!fs::exists(path)) throw ConfigError("checkpoint '" + path.string() + "' does not exist", "checkpoint");
  const model::Checkpoint ckpt = model::load_checkpoint(path);
  Trained t{model::model_from_checkpoint(ckpt), {}, std::nullopt};
  const Tensor* mean = ckpt.find("scaler.mean");
  const Tensor* std_dev = ckpt.find("scaler.std");
  const std::size_t d = t.model.config.channels;
  if (mean == nullptr || std_dev == nullptr || mean->size() != d || std_dev->size() != d) {
    throw DataError("checkpoint '" + path.string() + "' has no scaler for " + std::to_string(d) + " channels");
  }
  t.scaler.mean.assign(mean->data().begin(), mean->data().end());
  t.scaler.std.assign(std_dev->data().begin(), std_dev->data().end());
  if (auto it = ckpt.entries.find("split"); it != ckpt.entries.end()) t.split = parse_ratios(it->second);
  return t;
}

// Model config in effect plus the run settings.
RunConfig effective(const RunConfig& cfg, const model::KarmaConfig& mc) {
  RunConfig e = cfg;
  e.model = mc;
  return e;
}

std::size_t default_origin(const data::SeriesTable& table, const data::SplitRatios& ratios,
                           const model::KarmaConfig& mc) {
  return data::chrono_split(table, ratios, mc.lookback, mc.horizon).val_end;
}

void check_origin(std::size_t origin, std::size_t rows, std::size_t lookback) {
  if (origin < lookback) {
    throw ConfigError("origin " + std::to_string(origin) + " leaves fewer than L=" + std::to_string(lookback) +
                          " rows of history",
                      "origin");
  }
  if (origin > rows) {
    throw ConfigError("origin " + std::to_string(origin) + " is past the end of the data (" + std::to_string(rows) +
                          " rows)",
                      "origin");
  }
}

// Rows [origin - L, origin) of a scaled table as an [L x D] window.
Tensor history_window(const data::SeriesTable& scaled, std::size_t origin, std::size_t lookback) {
  const std::size_t d = scaled.channels();
  const auto begin = scaled.values.begin() + static_cast<std::ptrdiff_t>((origin - lookback) * d);
  return Tensor::from_data({lookback, d}, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(lookback * d)));
}

// Last two axes of a traced tensor as CSV with a leading label column.
std::string matrix_csv(const Tensor& t, const std::string& row_label, const std::vector<std::string>& row_names,
                       const std::vector<std::string>& col_names) {
  const std::size_t cols = t.shape().back();
  const std::size_t rows = t.rank() >= 2 ? t.shape()[t.rank() - 2] : 1;
  std::string out = row_label;
  for (std::size_t c = 0; c < cols; ++c) out += "," + (c < col_names.size() ? col_names[c] : std::to_string(c));
  out += "\n";
  const double* p = t.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    out += r < row_names.size() ? row_names[r] : std::to_string(r);
    for (std::size_t c = 0; c < cols; ++c) out += "," + format_double(p[r * cols + c]);
    out += "\n";
  }
  return out;
}

std::vector<std::string> numbered(const std::string& prefix, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

std::string svg_number(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

// One panel per channel: history, truth and forecast as polylines.
std::string forecast_svg(const data::SeriesTable& table, std::size_t origin, std::size_t lookback,
                         const std::vector<double>& forecast, std::size_t horizon) {
  const std::size_t d = table.channels();
  const double width = 900.0, panel = 160.0, pad = 20.0;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << svg_number(panel * static_cast<double>(d)) << "\">\n";
  const double steps = static_cast<double>(lookback + horizon - 1);
  for (std::size_t c = 0; c < d; ++c) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    auto see = [&](double v) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    };
    const std::size_t end = std::min(table.rows(), origin + horizon);
    for (std::size_t r = origin - lookback; r < end; ++r) see(table.at(r, c));
    for (std::size_t s = 0; s < horizon; ++s) see(forecast[s * d + c]);
    if (hi <= lo) hi = lo + 1.0;
    const double top = panel * static_cast<double>(c);
    auto x_at = [&](std::size_t i) { return svg_number(pad + (width - 2 * pad) * static_cast<double>(i) / steps); };
    auto y_at = [&](double v) { return svg_number(top + panel - pad - (panel - 2 * pad) * (v - lo) / (hi - lo)); };
    auto line = [&](const std::string& colour, std::size_t first, const std::vector<double>& values) {
      svg << "  <polyline fill=\"none\" stroke=\"" << colour << "\" points=\"";
      for (std::size_t i = 0; i < values.size(); ++i) svg << (i ? " " : "") << x_at(first + i) << ',' << y_at(values[i]);
      svg << "\"/>\n";
    };
    std::vector<double> history, truth, pred;
    for (std::size_t r = origin - lookback; r < origin; ++r) history.push_back(table.at(r, c));
    for (std::size_t r = origin; r < end; ++r) truth.push_back(table.at(r, c));
    for (std::size_t s = 0; s < horizon; ++s) pred.push_back(forecast[s * d + c]);
    svg << "  <text x=\"" << pad << "\" y=\"" << svg_number(top + 14) << "\" font-size=\"12\">"
        << table.channel_names[c] << "</text>\n";
    line("#888888", 0, history);
    if (!truth.empty()) line("#000000", lookback, truth);
    line("#d62728", lookback, pred);
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace

std::string version() { return KARMA_VERSION; }

std::string dump_report(const Report& report) { return report.dump(2) + "\n"; }

Report cmd_train(const RunConfig& cfg_in, std::ostream& log_stream) {
  const auto start = Clock::now();
  const Log log{log_stream, cfg_in.quiet};
  RunConfig cfg = cfg_in;
  const data::SeriesTable table = load_table(cfg, cfg.model.channels);
  if (!cfg.data.empty()) {
    if (cfg.channels_given && cfg.model.channels != table.channels()) require_channels(table, cfg.model.channels, cfg);
    cfg.model.channels = table.channels();
    cfg.model.validate();
  }
  const auto& mc = cfg.model;
  const data::SplitRatios ratios = cfg.split_for(mc.channels);
  const data::Splits splits = data::chrono_split(table, ratios, mc.lookback, mc.horizon);
  const data::ScalerStats scaler = data::fit_scaler(splits.train);
  for (const auto& w : scaler.warnings) log("warning: " + w);
  const auto train = data::apply_scaler(splits.train, scaler);
  const auto val = data::apply_scaler(splits.val, scaler);
  const auto test = data::apply_scaler(splits.test, scaler);

  Rng rng(mc.seed);
  model::KarmaModel model = model::init_parameters(mc, rng);
  const std::size_t params = model.parameter_count();
  log("train: " + source_name(cfg) + ", " + std::to_string(table.rows()) + " rows x " +
      std::to_string(mc.channels) + " channels, " + std::to_string(params) + " parameters");

  training::TrainConfig tc = cfg.train_config();
  tc.on_epoch = [&](const training::EpochRecord& r) {
    log("epoch " + std::to_string(r.epoch) + "  train " + format_double(r.train_loss) + "  val " +
        format_double(r.val_loss) + "  lr " + format_double(r.lr) + "  " + svg_number(r.seconds) + " s");
  };
  const auto train_start = Clock::now();
  training::TrainResult result = training::train_loop(std::move(model), train, val, tc);
  const double train_seconds = seconds_since(train_start);

  const auto eval_start = Clock::now();
  const auto windows = data::make_windows(test, mc.lookback, mc.horizon);
  const training::EvalOptions opts{cfg.batch_size, cfg.threads, &scaler};
  const training::Evaluation ev = training::evaluate(result.model, test, windows, opts);
  const auto persistence = training::persistence_metrics(test, windows, mc.lookback, mc.horizon);
  const auto train_mean = training::constant_metrics(test, windows, mc.lookback, mc.horizon, column_means(train));
  const double eval_seconds = seconds_since(eval_start);

  model::Checkpoint ckpt = model::to_checkpoint(result.model);
  ckpt.entries["split"] = join_ratios(ratios);
  ckpt.entries["alpha"] = format_double(cfg.loss.alpha);
  ckpt.tensors.push_back({"scaler.mean", Tensor::from_data({mc.channels}, scaler.mean)});
  ckpt.tensors.push_back({"scaler.std", Tensor::from_data({mc.channels}, scaler.std)});
  const fs::path ckpt_path = cfg.checkpoint_path();
  ensure_dir(ckpt_path.parent_path());
  ensure_dir(cfg.out);
  model::save_checkpoint(ckpt_path, ckpt);
  const fs::path history_path = cfg.out / "history.csv";
  training::write_history(history_path, result.history);

  Report r = base_report(cfg);
  r["parameter_count"] = params;
  r["data"] = {{"source", source_name(cfg)},
               {"rows", table.rows()},
               {"channels", table.channel_names},
               {"split", split_json(ratios)},
               {"train_end", splits.train_end},
               {"val_end", splits.val_end},
               {"scaler", {{"mean", scaler.mean}, {"std", scaler.std}, {"warnings", scaler.warnings}}}};
  Report history = Report::array();
  std::vector<double> epoch_seconds;
  for (const auto& e : result.history) {
    history.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"lr", e.lr}});
    epoch_seconds.push_back(e.seconds);
  }
  r["training"] = {{"epochs_run", result.history.size()},
                   {"best_epoch", result.best_epoch},
                   {"best_val_loss", result.best_val_loss},
                   {"stopped_early", result.stopped_early},
                   {"history", history}};
  r["metrics"] = {{"normalized", metrics_json(ev.normalized)}, {"raw", metrics_json(*ev.raw)}};
  r["baselines"] = {{"persistence", brief_json(persistence)}, {"train_mean", brief_json(train_mean)}};
  r["files"] = {{"checkpoint", ckpt_path.string()}, {"history", history_path.string()}};
  r["timings"] = {{"train_seconds", train_seconds},
                  {"eval_seconds", eval_seconds},
                  {"epoch_seconds", epoch_seconds},
                  {"total_seconds", seconds_since(start)}};
  write_report(cfg, r);
  log("test mse " + format_double(ev.normalized.mse) + "  mae " + format_double(ev.normalized.mae) +
      " (normalized)");
  return r;
}

Report cmd_eval(const RunConfig& cfg, std::ostream& log_stream) {
  const auto start = Clock::now();
  const Log log{log_stream, cfg.quiet};
  const Trained t = load_trained(cfg);
  const auto& mc = t.model.config;
  const data::SeriesTable table = load_table(cfg, mc.channels);
  require_channels(table, mc.channels, cfg);
  const data::SplitRatios ratios = cfg.split ? *cfg.split : t.split.value_or(data::SplitRatios::defaults_for(mc.channels));
  const data::Splits splits = data::chrono_split(table, ratios, mc.lookback, mc.horizon);
  const auto train = data::apply_scaler(splits.train, t.scaler);
  const auto test = data::apply_scaler(splits.test, t.scaler);
  const auto windows = data::make_windows(test, mc.lookback, mc.horizon);
  const training::EvalOptions opts{cfg.batch_size, cfg.threads, &t.scaler};
  const training::Evaluation ev = training::evaluate(t.model, test, windows, opts);
  const auto persistence = training::persistence_metrics(test, windows, mc.lookback, mc.horizon);
  const auto train_mean = training::constant_metrics(test, windows, mc.lookback, mc.horizon, column_means(train));

  Report r = base_report(effective(cfg, mc));
  r["parameter_count"] = t.model.parameter_count();
  r["data"] = {{"source", source_name(cfg)},
               {"rows", table.rows()},
               {"channels", table.channel_names},
               {"split", split_json(ratios)},
               {"train_end", splits.train_end},
               {"val_end", splits.val_end}};
  r["metrics"] = {{"normalized", metrics_json(ev.normalized)}, {"raw", metrics_json(*ev.raw)}};
  r["baselines"] = {{"persistence", brief_json(persistence)}, {"train_mean", brief_json(train_mean)}};
  r["files"] = {{"checkpoint", cfg.checkpoint_path().string()}};
  r["timings"] = {{"total_seconds", seconds_since(start)}};
  write_report(cfg, r);
  log("eval: " + std::to_string(windows.size()) + " windows, mse " + format_double(ev.normalized.mse) + "  mae " +
      format_double(ev.normalized.mae) + " (normalized)");
  return r;
}

Report cmd_predict(const RunConfig& cfg, std::ostream& log_stream) {
  const auto start = Clock::now();
  const Log log{log_stream, cfg.quiet};
  const Trained t = load_trained(cfg);
  const auto& mc = t.model.config;
  const data::SeriesTable table = load_table(cfg, mc.channels);
  require_channels(table, mc.channels, cfg);
  const data::SplitRatios ratios = cfg.split ? *cfg.split : t.split.value_or(data::SplitRatios::defaults_for(mc.channels));
  const std::size_t origin = cfg.origin ? *cfg.origin : default_origin(table, ratios, mc);
  check_origin(origin, table.rows(), mc.lookback);

  const data::SeriesTable scaled = data::apply_scaler(table, t.scaler);
  Tensor pred;
  {
    NoGradScope no_grad;
    Rng rng(mc.seed);
    pred = model::karma_forward(history_window(scaled, origin, mc.lookback), t.model, rng, false);
  }
  const std::size_t d = mc.channels;
  std::vector<double> raw(pred.data().begin(), pred.data().end());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = raw[i] * t.scaler.std[i % d] + t.scaler.mean[i % d];

  std::string csv = "step";
  for (const auto& name : table.channel_names) csv += "," + name + "_truth," + name + "_pred";
  csv += "\n";
  std::size_t truth_rows = 0;
  for (std::size_t s = 0; s < mc.horizon; ++s) {
    const bool has_truth = origin + s < table.rows();
    truth_rows += has_truth ? 1 : 0;
    csv += std::to_string(s + 1);
    for (std::size_t c = 0; c < d; ++c) {
      csv += ",";
      if (has_truth) csv += format_double(table.at(origin + s, c));
      csv += "," + format_double(raw[s * d + c]);
    }
    csv += "\n";
  }
  const fs::path csv_path = cfg.out / "forecast.csv";
  write_text(csv_path, csv);

  Report r = base_report(effective(cfg, mc));
  r["origin"] = origin;
  r["origin_timestamp"] = origin < table.rows() ? table.timestamps[origin] : std::string();
  r["truth_rows"] = truth_rows;
  r["files"] = {{"forecast", csv_path.string()}};
  if (cfg.svg) {
    const fs::path svg_path = cfg.out / "forecast.svg";
    write_text(svg_path, forecast_svg(table, origin, mc.lookback, raw, mc.horizon));
    r["files"]["svg"] = svg_path.string();
  }
  r["timings"] = {{"total_seconds", seconds_since(start)}};
  write_report(cfg, r);
  log("predict: " + std::to_string(mc.horizon) + " steps from row " + std::to_string(origin) + " -> " +
      csv_path.string());
  return r;
}

Report cmd_decompose(const RunConfig& cfg_in, std::ostream& log_stream) {
  const auto start = Clock::now();
  const Log log{log_stream, cfg_in.quiet};
  RunConfig cfg = cfg_in;
  model::KarmaModel model;
  data::ScalerStats scaler;
  data::SeriesTable table;
  data::SplitRatios ratios;
  if (cfg.trained) {
    Trained t = load_trained(cfg);
    model = std::move(t.model);
    scaler = std::move(t.scaler);
    table = load_table(cfg, model.config.channels);
    require_channels(table, model.config.channels, cfg);
    ratios = cfg.split ? *cfg.split : t.split.value_or(data::SplitRatios::defaults_for(model.config.channels));
  } else {
    table = load_table(cfg, cfg.model.channels);
    if (!cfg.data.empty()) {
      if (cfg.channels_given) require_channels(table, cfg.model.channels, cfg);
      cfg.model.channels = table.channels();
      cfg.model.validate();
    }
    Rng rng(cfg.model.seed);
    model = model::init_parameters(cfg.model, rng);
    ratios = cfg.split_for(cfg.model.channels);
    scaler = data::fit_scaler(data::chrono_split(table, ratios, cfg.model.lookback, cfg.model.horizon).train);
  }
  const auto& mc = model.config;
  const std::size_t origin = cfg.origin ? *cfg.origin : default_origin(table, ratios, mc);
  check_origin(origin, table.rows(), mc.lookback);
  const data::SeriesTable scaled = data::apply_scaler(table, scaler);

  model::KarmaTrace trace;
  {
    NoGradScope no_grad;
    Rng rng(mc.seed);
    model::karma_forward(history_window(scaled, origin, mc.lookback), model, rng, false, &trace);
  }

  const fs::path dir = cfg.out / "decompose";
  std::vector<std::string> steps;
  for (std::size_t r = origin - mc.lookback; r < origin; ++r) steps.push_back(table.timestamps[r]);
  const auto inner_cols = numbered("i", mc.atcd_inner);
  const auto& channels = table.channel_names;
  Report files;
  auto emit = [&](const std::string& name, const Tensor& t, const std::string& row_label,
                  const std::vector<std::string>& rows, const std::vector<std::string>& cols) {
    const fs::path path = dir / (name + ".csv");
    write_text(path, matrix_csv(t, row_label, rows, cols));
    const std::size_t r = t.rank() >= 2 ? t.shape()[t.rank() - 2] : 1;
    files[name] = {{"path", path.string()}, {"rows", r}, {"columns", t.shape().back()}};
  };
  if (mc.use_atcd) {
    emit("trend", trace.atcd.trend, "timestamp", steps, channels);
    emit("seasonal", trace.atcd.seasonal, "timestamp", steps, channels);
    emit("inner_input", trace.atcd.inner_input, "timestamp", steps, inner_cols);
    emit("inner_trend", trace.atcd.inner_trend, "timestamp", steps, inner_cols);
    emit("inner_seasonal", trace.atcd.inner_seasonal, "timestamp", steps, inner_cols);
  }
  emit("hftd_input", trace.seasonal_embedding, "channel", channels, numbered("e", mc.e_s));
  if (mc.use_hftd) {
    emit("F_h", trace.initial.high, "channel", channels, numbered("k", trace.initial.coeffs()));
    emit("F_l", trace.initial.low, "channel", channels, numbered("k", trace.initial.coeffs()));
  }
  emit("T_f", trace.initial.temporal_fwd, "channel", channels, numbered("e", mc.e_s));

  Report r = base_report(effective(cfg, mc));
  r["origin"] = origin;
  r["trained"] = cfg.trained;
  r["parameter_count"] = model.parameter_count();
  r["components"] = files;
  r["files"] = Report::object();
  r["timings"] = {{"total_seconds", seconds_since(start)}};
  write_report(cfg, r);
  log("decompose: " + std::to_string(files.size()) + " component files in " + dir.string());
  return r;
}

Report cmd_bench(const RunConfig& cfg, std::ostream& log_stream) {
  const auto start = Clock::now();
  const Log log{log_stream, cfg.quiet};
  struct Case {
    std::size_t length;
    model::KarmaModel model;
    Tensor x;
    double forward = std::numeric_limits<double>::infinity();
    double backward = std::numeric_limits<double>::infinity();
  };
  std::vector<Case> cases;
  for (std::size_t len : cfg.bench_lengths) {
    model::KarmaConfig mc = cfg.model;
    mc.lookback = len;
    mc.horizon = len;
    mc.channels = cfg.bench_channels;
    Rng rng(mc.seed);
    model::KarmaModel m = model::init_parameters(mc, rng);
    Rng data_rng(mc.seed, 1);
    std::vector<double> x(cfg.bench_batch * len * mc.channels);
    for (double& v : x) v = data_rng.normal();
    cases.push_back({len, std::move(m), Tensor::from_data({cfg.bench_batch, len, mc.channels}, std::move(x))});
  }
  auto forward = [](const Case& c) {
    NoGradScope no_grad;
    Rng rng(c.model.config.seed);
    const auto t0 = Clock::now();
    model::karma_forward(c.x, c.model, rng, false);
    return seconds_since(t0);
  };
  auto forward_backward = [](const Case& c) {
    Rng rng(c.model.config.seed);
    const auto t0 = Clock::now();
    {
      Tape tape;
      TapeScope scope(tape);
      Tensor loss = mean(square(model::karma_forward(c.x, c.model, rng, false)));
      tape.backward(loss);
    }
    const double s = seconds_since(t0);
    for (const auto& p : c.model.parameters()) p.tensor.zero_grad();
    return s;
  };
  for (auto& c : cases) forward(c);
  // Interleaved rounds; best time per length.
  for (std::size_t rep = 0; rep < cfg.bench_reps; ++rep) {
    for (auto& c : cases) {
      c.forward = std::min(c.forward, forward(c));
      if (cfg.bench_backward) c.backward = std::min(c.backward, forward_backward(c));
    }
  }

  constexpr double limit = 2.5;
  Report runs = Report::array(), ratios = Report::array(), doubling = Report::array(), sizes = Report::array();
  double worst = 0.0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const Case& c = cases[i];
    Report run = {{"length", c.length}, {"forward_seconds", c.forward}};
    if (cfg.bench_backward) run["forward_backward_seconds"] = c.backward;
    runs.push_back(run);
    sizes.push_back({{"length", c.length}, {"parameters", c.model.parameter_count()}});
    std::string line = "L=T=" + std::to_string(c.length) + "  forward " + svg_number(c.forward) + " s";
    if (i > 0) {
      const double ratio = c.forward / cases[i - 1].forward;
      ratios.push_back({{"from", cases[i - 1].length}, {"to", c.length}, {"ratio", ratio}});
      line += "  x" + svg_number(ratio);
    }
    log(line);
    for (std::size_t j = 0; j < i; ++j) {
      if (cases[j].length * 2 == c.length) {
        const double ratio = c.forward / cases[j].forward;
        worst = std::max(worst, ratio);
        doubling.push_back({{"from", cases[j].length}, {"to", c.length}, {"ratio", ratio}});
      }
    }
  }
  const bool ok = worst <= limit;
  if (!doubling.empty()) {
    log(std::string(ok ? "ok" : "warning") + ": worst doubling ratio " + svg_number(worst) + " (limit " +
        svg_number(limit) + ")");
  }

  RunConfig echo = cfg;
  echo.model.channels = cfg.bench_channels;
  Report r = base_report(echo);
  r["lengths"] = cfg.bench_lengths;
  r["channels"] = cfg.bench_channels;
  r["batch"] = cfg.bench_batch;
  r["parameter_count"] = sizes;
  r["doubling_limit"] = limit;
  r["timings"] = {{"runs", runs},
                  {"ratios", ratios},
                  {"doubling_ratios", doubling},
                  {"worst_doubling_ratio", doubling.empty() ? Report(nullptr) : Report(worst)},
                  {"within_limit", ok},
                  {"total_seconds", seconds_since(start)}};
  write_report(cfg, r);
  return r;
}

Report cmd_synth(const RunConfig& cfg, std::ostream& log_stream) {
  const auto start = Clock::now();
  const Log log{log_stream, cfg.quiet};
  data::SyntheticSpec spec = cfg.synth;
  spec.channels = cfg.model.channels;
  const data::SeriesTable table = data::generate_synthetic(spec);
  const fs::path path = cfg.out / "synthetic.csv";
  ensure_dir(cfg.out);
  data::write_csv(path, table);
  Report r = base_report(cfg);
  r["rows"] = table.rows();
  r["channels"] = table.channel_names;
  r["files"] = {{"data", path.string()}};
  r["timings"] = {{"total_seconds", seconds_since(start)}};
  write_report(cfg, r);
  log("synth: " + std::to_string(table.rows()) + " rows x " + std::to_string(table.channels()) + " channels -> " +
      path.string());
  return r;
}

Report run_command(const RunConfig& cfg, std::ostream& log) {
  switch (cfg.command) {
    case Command::train: return cmd_train(cfg, log);
    case Command::eval: return cmd_eval(cfg, log);
    case Command::predict: return cmd_predict(cfg, log);
    case Command::decompose: return cmd_decompose(cfg, log);
    case Command::bench: return cmd_bench(cfg, log);
    case Command::synth: return cmd_synth(cfg, log);
  }
  throw ContractError("unknown command");
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const char* env_seed) {
  CLI::App app{"karma: long-horizon multivariate time-series forecasting"};
  app.set_version_flag("--version", version());
  std::string command;
  app.add_option("command", command, "train, eval, predict, decompose, bench or synth")
      ->required()
      ->check(CLI::IsMember({"train", "eval", "predict", "decompose", "bench", "synth"}));
  std::string config_file;
  app.add_option("--config", config_file, "flat 'key = value' file; flags override it");
  const auto keys = key_help();
  std::map<std::string, std::string> values;
  for (const auto& k : keys) {
    app.add_option("--" + k.key, values[k.key], k.description + " [" + k.default_value + "]");
  }

  std::vector<std::string> argv_store{"karma"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  std::map<std::string, std::string> flags;
  for (const auto& k : keys) {
    if (app.count("--" + k.key) > 0) flags[k.key] = values[k.key];
  }
  try {
    std::optional<fs::path> file;
    if (!config_file.empty()) file = config_file;
    const RunConfig cfg = parse_config(*parse_command(command), file, flags, env_seed);
    const Report report = run_command(cfg, err);
    out << report["files"]["report"].get<std::string>() << '\n';
    return 0;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace karma::cli
