#include "karma/training/trainer.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include "karma/error.hpp"
#include "karma/ops.hpp"

namespace karma::training {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<Tensor> handles(const model::KarmaModel& model) {
  std::vector<Tensor> out;
  for (const auto& p : model.parameters()) out.push_back(p.tensor);
  return out;
}

std::vector<std::vector<double>> snapshot(const std::vector<Tensor>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const Tensor& p : params) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

void restore(const std::vector<Tensor>& params, const std::vector<std::vector<double>>& saved) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::copy(saved[i].begin(), saved[i].end(), params[i].mutable_data().begin());
  }
}

// Batch index ranges [begin, end) over n windows.
std::vector<std::pair<std::size_t, std::size_t>> batches(std::size_t n, std::size_t batch) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch) out.emplace_back(b, std::min(n, b + batch));
  return out;
}

// Runs fn(batch_index) over all batches, spreading them round-robin across threads.
template <typename Fn>
void for_each_batch(std::size_t count, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t b = 0; b < count; ++b) fn(b);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t b = w; b < count; b += threads) fn(b);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

Metrics compute_metrics(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    throw ShapeError("metrics: prediction " + to_string(prediction.shape()) + " vs target " +
                     to_string(target.shape()));
  }
  if (prediction.rank() < 2 || prediction.size() == 0) throw DataError("metrics: no predictions");
  const auto& shape = prediction.shape();
  const std::size_t d = shape.back();
  const std::size_t t = shape[shape.size() - 2];
  const std::size_t b = prediction.size() / (t * d);
  Metrics m;
  m.windows = b;
  m.horizon_mse.assign(t, 0.0);
  m.horizon_mae.assign(t, 0.0);
  auto p = prediction.data();
  auto y = target.data();
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t s = 0; s < t; ++s) {
      for (std::size_t c = 0; c < d; ++c) {
        const std::size_t k = (i * t + s) * d + c;
        const double e = p[k] - y[k];
        m.horizon_mse[s] += e * e;
        m.horizon_mae[s] += std::abs(e);
      }
    }
  }
  const double per_step = static_cast<double>(b * d);
  for (std::size_t s = 0; s < t; ++s) {
    m.mse += m.horizon_mse[s];
    m.mae += m.horizon_mae[s];
    m.horizon_mse[s] /= per_step;
    m.horizon_mae[s] /= per_step;
  }
  m.mse /= per_step * static_cast<double>(t);
  m.mae /= per_step * static_cast<double>(t);
  return m;
}

Metrics persistence_metrics(const data::SeriesTable& table, std::span<const data::WindowSample> windows,
                            std::size_t lookback, std::size_t horizon) {
  if (windows.empty()) throw DataError("no windows for the persistence baseline");
  auto [x, y] = data::gather_batch(table, windows, lookback, horizon);
  const std::size_t d = table.channels();
  std::vector<double> pred(y.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const double* last = x.data().data() + (i * lookback + lookback - 1) * d;
    for (std::size_t s = 0; s < horizon; ++s) std::copy(last, last + d, pred.begin() + static_cast<std::ptrdiff_t>((i * horizon + s) * d));
  }
  return compute_metrics(Tensor::from_data(y.shape(), std::move(pred)), y);
}

Metrics constant_metrics(const data::SeriesTable& table, std::span<const data::WindowSample> windows,
                         std::size_t lookback, std::size_t horizon, std::span<const double> value) {
  if (windows.empty()) throw DataError("no windows for the constant baseline");
  const std::size_t d = table.channels();
  if (value.size() != d) throw ShapeError("constant baseline needs one value per channel");
  auto [x, y] = data::gather_batch(table, windows, lookback, horizon);
  std::vector<double> pred(y.size());
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = value[i % d];
  return compute_metrics(Tensor::from_data(y.shape(), std::move(pred)), y);
}

Tensor predict_windows(const model::KarmaModel& model, const data::SeriesTable& table,
                       std::span<const data::WindowSample> windows, const EvalOptions& opts) {
  if (windows.empty()) throw DataError("no windows to predict");
  if (opts.batch_size == 0) throw ConfigError("batch size must be positive", "batch_size");
  const auto& cfg = model.config;
  if (table.channels() != cfg.channels) {
    throw DataError("data has " + std::to_string(table.channels()) + " channels but the model expects " +
                    std::to_string(cfg.channels));
  }
  const std::size_t t = cfg.horizon;
  const std::size_t d = cfg.channels;
  const auto ranges = batches(windows.size(), opts.batch_size);
  std::vector<double> out(windows.size() * t * d);
  for_each_batch(ranges.size(), opts.threads, [&](std::size_t bi) {
    NoGradScope no_grad;
    const auto [begin, end] = ranges[bi];
    auto [x, y] = data::gather_batch(table, windows.subspan(begin, end - begin), cfg.lookback, cfg.horizon);
    Rng rng(cfg.seed);
    Tensor pred = model::karma_forward(x, model, rng, false);
    std::copy(pred.data().begin(), pred.data().end(), out.begin() + static_cast<std::ptrdiff_t>(begin * t * d));
  });
  return Tensor::from_data({windows.size(), t, d}, std::move(out));
}

Evaluation evaluate(const model::KarmaModel& model, const data::SeriesTable& table,
                    std::span<const data::WindowSample> windows, const EvalOptions& opts) {
  if (windows.empty()) throw DataError("evaluation set is empty");
  const auto& cfg = model.config;
  Tensor pred = predict_windows(model, table, windows, opts);
  auto [x, y] = data::gather_batch(table, windows, cfg.lookback, cfg.horizon);
  Evaluation ev;
  ev.normalized = compute_metrics(pred, y);
  if (opts.scaler != nullptr) {
    const auto& s = *opts.scaler;
    const std::size_t d = cfg.channels;
    if (s.mean.size() != d) throw DataError("scaler channel count mismatch");
    auto unscale = [&](const Tensor& v) {
      std::vector<double> raw(v.data().begin(), v.data().end());
      for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = raw[i] * s.std[i % d] + s.mean[i % d];
      return Tensor::from_data(v.shape(), std::move(raw));
    };
    ev.raw = compute_metrics(unscale(pred), unscale(y));
  }
  return ev;
}

double validation_loss(const model::KarmaModel& model, const data::SeriesTable& table,
                       std::span<const data::WindowSample> windows, const LossConfig& loss,
                       const EvalOptions& opts) {
  if (windows.empty()) throw DataError("validation set is empty");
  Tensor pred = predict_windows(model, table, windows, opts);
  auto [x, y] = data::gather_batch(table, windows, model.config.lookback, model.config.horizon);
  const std::size_t t = model.config.horizon;
  const std::size_t d = model.config.channels;
  double total = 0.0;
  for (const auto& [begin, end] : batches(windows.size(), opts.batch_size)) {
    const std::size_t n = end - begin;
    auto part = [&](const Tensor& v) {
      std::vector<double> buf(v.data().begin() + static_cast<std::ptrdiff_t>(begin * t * d),
                              v.data().begin() + static_cast<std::ptrdiff_t>(end * t * d));
      return Tensor::from_data({n, t, d}, std::move(buf));
    };
    total += hybrid_loss(part(y), part(pred), loss).item() * static_cast<double>(n);
  }
  return total / static_cast<double>(windows.size());
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive", "epochs");
  if (batch_size == 0) throw ConfigError("batch_size must be positive", "batch_size");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive", "lr");
  if (patience == 0) throw ConfigError("patience must be positive", "patience");
  if (!(min_delta >= 0.0)) throw ConfigError("min_delta must be nonnegative", "min_delta");
  if (stride == 0) throw ConfigError("stride must be positive", "stride");
  if (threads == 0) throw ConfigError("threads must be positive", "threads");
  loss.validate();
}

TrainResult train_loop(model::KarmaModel model, const data::SeriesTable& train, const data::SeriesTable& val,
                       const TrainConfig& cfg) {
  cfg.validate();
  const auto& mc = model.config;
  const auto train_windows = data::make_windows(train, mc.lookback, mc.horizon, cfg.stride);
  const auto val_windows = data::make_windows(val, mc.lookback, mc.horizon, 1);
  const std::vector<Tensor> params = handles(model);
  for (const Tensor& p : params) p.zero_grad();

  AdamState adam;
  EarlyStop stopper{cfg.patience, cfg.min_delta};
  Rng shuffle_rng(cfg.seed, 1);
  Rng dropout_rng(cfg.seed, 2);
  EvalOptions eval_opts{cfg.batch_size, cfg.threads, nullptr};

  TrainResult result;
  std::vector<std::vector<double>> best = snapshot(params);
  std::vector<std::size_t> order(train_windows.size());
  std::vector<data::WindowSample> batch;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = Clock::now();
    adam.lr = lr_decay(epoch, cfg.lr);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    for (const auto& [begin, end] : batches(order.size(), cfg.batch_size)) {
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(train_windows[order[i]]);
      auto [x, y] = data::gather_batch(train, batch, mc.lookback, mc.horizon);
      Tape tape;
      TapeScope scope(tape);
      Tensor pred = model::karma_forward(x, model, dropout_rng, true);
      Tensor loss = hybrid_loss(y, pred, cfg.loss);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw TrainingError("training diverged: loss " + fmt(value) + " in epoch " + std::to_string(epoch + 1) +
                            " at batch starting " + std::to_string(begin));
      }
      tape.backward(loss);
      adam_step(params, adam);
      loss_sum += value * static_cast<double>(end - begin);
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_loss = validation_loss(model, val, val_windows, cfg.loss, eval_opts);
    rec.lr = adam.lr;
    rec.seconds = seconds_since(start);
    if (!std::isfinite(rec.val_loss)) {
      throw TrainingError("validation loss " + fmt(rec.val_loss) + " in epoch " + std::to_string(rec.epoch));
    }
    const StopDecision decision = early_stop_update(stopper, rec.val_loss);
    if (decision.improved) {
      best = snapshot(params);
      result.best_epoch = rec.epoch;
      result.best_val_loss = rec.val_loss;
    }
    result.history.push_back(rec);
    if (cfg.on_epoch) cfg.on_epoch(rec);
    if (decision.stop) {
      result.stopped_early = true;
      break;
    }
  }
  restore(params, best);
  result.model = std::move(model);
  return result;
}

std::string format_history(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,val_loss,lr,seconds\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + fmt(r.train_loss) + "," + fmt(r.val_loss) + "," + fmt(r.lr) + "," +
           fmt(r.seconds) + "\n";
  }
  return out;
}

void write_history(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write history '" + path.string() + "'");
  out << format_history(history);
}

}  // namespace karma::training
