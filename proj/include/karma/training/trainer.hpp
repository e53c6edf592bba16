#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "karma/data/series.hpp"
#include "karma/model/karma.hpp"
#include "karma/training/loss.hpp"
#include "karma/training/optim.hpp"

namespace karma::training {

/// Errors averaged over every element; horizon_* hold one value per forecast step.
struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  std::vector<double> horizon_mse;
  std::vector<double> horizon_mae;
  std::size_t windows = 0;
};

/// Metrics of predictions against targets, both [B x T x D] (or [T x D]).
Metrics compute_metrics(const Tensor& prediction, const Tensor& target);

/// Repeats the last lookback row over the whole horizon.
Metrics persistence_metrics(const data::SeriesTable& table, std::span<const data::WindowSample> windows,
                            std::size_t lookback, std::size_t horizon);

/// Predicts `value[c]` for channel c at every step, e.g. the training mean.
Metrics constant_metrics(const data::SeriesTable& table, std::span<const data::WindowSample> windows,
                         std::size_t lookback, std::size_t horizon, std::span<const double> value);

struct EvalOptions {
  std::size_t batch_size = 32;
  std::size_t threads = 1;
  /// When set, raw-scale metrics are reported too.
  const data::ScalerStats* scaler = nullptr;
};

struct Evaluation {
  Metrics normalized;
  std::optional<Metrics> raw;
};

/// Forecasts for the given windows of a (scaled) table, in window order: [B x T x D].
Tensor predict_windows(const model::KarmaModel& model, const data::SeriesTable& table,
                       std::span<const data::WindowSample> windows, const EvalOptions& opts = {});

/// DataError when `windows` is empty.
Evaluation evaluate(const model::KarmaModel& model, const data::SeriesTable& table,
                    std::span<const data::WindowSample> windows, const EvalOptions& opts = {});

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  LossConfig loss;
  std::size_t patience = 3;
  double min_delta = 0.0;
  std::size_t stride = 1;
  std::uint64_t seed = 2024;
  std::size_t threads = 1;  // validation passes only
  /// Called after every epoch; handy for progress output.
  std::function<void(const EpochRecord&)> on_epoch;

  void validate() const;
};

struct TrainResult {
  model::KarmaModel model;  // parameters from the best validation epoch
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool stopped_early = false;
};

/// Seeded mini-batch Adam on hybrid_loss with per-epoch validation, halving learning rate
/// and early stopping. `train` and `val` are already scaled. TrainingError when a loss goes
/// NaN or infinite.
TrainResult train_loop(model::KarmaModel model, const data::SeriesTable& train, const data::SeriesTable& val,
                       const TrainConfig& cfg);

/// Validation loss: hybrid_loss averaged over batches weighted by batch size.
double validation_loss(const model::KarmaModel& model, const data::SeriesTable& table,
                       std::span<const data::WindowSample> windows, const LossConfig& loss,
                       const EvalOptions& opts = {});

/// "epoch,train_loss,val_loss,lr,seconds" rows.
std::string format_history(const std::vector<EpochRecord>& history);
void write_history(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

}  // namespace karma::training
